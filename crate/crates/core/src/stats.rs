//! Small statistics helpers shared by the harness and the test oracles:
//! binomial error bars, Wilson intervals, empirical-distribution tests.

/// Standard error of a binomial proportion estimate.
pub fn binomial_se(p: f64, n: usize) -> f64 {
    (p * (1.0 - p) / n as f64).sqrt()
}

/// Wilson score interval for a binomial proportion.
pub fn wilson_ci(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// z for a two-sided 95% interval.
pub const Z_95: f64 = 1.959963984540054;

/// Dvoretzky–Kiefer–Wolfowitz band half-width at confidence `1 - alpha`.
pub fn dkw_band(n: usize, alpha: f64) -> f64 {
    ((2.0 / alpha).ln() / (2.0 * n as f64)).sqrt()
}

/// One-sample Kolmogorov–Smirnov statistic against `cdf`.
/// `samples` must be sorted ascending.
pub fn ks_statistic(sorted: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let n = sorted.len() as f64;
    let mut sup: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        let hi = (i as f64 + 1.0) / n - f;
        let lo = f - i as f64 / n;
        sup = sup.max(hi).max(lo);
    }
    sup
}

/// Asymptotic KS critical value at significance `alpha = 0.01`:
/// c(alpha) / sqrt(n) with c(0.01) = sqrt(ln(2/0.01)/2).
pub fn ks_critical_99(n: usize) -> f64 {
    (((2.0f64 / 0.01).ln()) / 2.0).sqrt() / (n as f64).sqrt()
}

/// Pearson chi-square statistic for observed counts vs expected counts.
pub fn chi_square_stat(observed: &[u64], expected: &[f64]) -> f64 {
    assert_eq!(observed.len(), expected.len());
    observed
        .iter()
        .zip(expected)
        .map(|(&o, &e)| {
            let d = o as f64 - e;
            d * d / e
        })
        .sum()
}

/// Upper 1% critical values of the chi-square distribution, indexed by
/// degrees of freedom 1..=9 (standard table values).
pub fn chi_square_crit_99(df: usize) -> f64 {
    const TABLE: [f64; 9] = [
        6.635, 9.210, 11.345, 13.277, 15.086, 16.812, 18.475, 20.090, 21.666,
    ];
    TABLE[df - 1]
}

/// Two-sample KS statistic; both slices must be sorted ascending.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> f64 {
    let (na, nb) = (a.len(), b.len());
    let mut i = 0;
    let mut j = 0;
    let mut sup: f64 = 0.0;
    while i < na && j < nb {
        if a[i] <= b[j] {
            i += 1;
        } else {
            j += 1;
        }
        sup = sup.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    sup
}

/// Critical value for the two-sample KS test at alpha = 0.01.
pub fn ks_two_sample_critical_99(na: usize, nb: usize) -> f64 {
    let c = (((2.0f64 / 0.01).ln()) / 2.0).sqrt();
    c * ((na + nb) as f64 / (na as f64 * nb as f64)).sqrt()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator).
pub fn sample_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let ss: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    (ss / (xs.len() as f64 - 1.0)).sqrt()
}
