//! Analytic distribution of the pairwise coalescent excess
//! `Z_ab = (delta_ab - mu_ab) / 2`: a mixture of shifted (truncated)
//! exponentials with disjoint ordered supports, one segment per population
//! on the path from the pair's divergence vertex to the root.
//!
//! The restriction of the coalescent to a pair of lineages is again a
//! coalescent, so the pair merges at unit rate per coalescent-time unit
//! while crossing populations; in weighted units segment `i` has rate
//! `1/mu_i`.


use crate::trees::{SpeciesPhylogeny, TaxonId, TreeError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DensityError {
    #[error("mixture weights must lie in (0,1) and sum to 1 within 1e-12 (sum = {0})")]
    BadWeights(f64),
    #[error("segment supports must be ordered and disjoint")]
    UnorderedSupports,
    #[error("segment rate must be positive and finite, got {0}")]
    BadRate(f64),
    #[error("quantile level must lie in [0, 1), got {0}")]
    BadAlpha(f64),
    #[error("xi must lie in (0, 1 - beta)")]
    BadXi,
    #[error(transparent)]
    Tree(#[from] TreeError),
}

/// One mixture piece: an exponential of rate `rate` shifted to `lower`,
/// truncated to `[lower, upper]` (`upper` may be infinite for the last
/// piece).
#[derive(Clone, Copy, Debug)]
pub struct MixtureSegment {
    pub lower: f64,
    pub upper: f64,
    pub rate: f64,
}

impl MixtureSegment {
    fn len(&self) -> f64 {
        self.upper - self.lower
    }

    /// Quantile of the normalized piece at level `u` in [0,1).
    fn quantile(&self, u: f64) -> f64 {
        if self.upper.is_infinite() {
            self.lower - (1.0 - u).ln() / self.rate
        } else {
            let mass = 1.0 - (-self.rate * self.len()).exp();
            self.lower - (1.0 - u * mass).ln() / self.rate
        }
    }

    fn density(&self, x: f64) -> f64 {
        let num = self.rate * (-self.rate * (x - self.lower)).exp();
        if self.upper.is_infinite() {
            num
        } else {
            num / (1.0 - (-self.rate * self.len()).exp())
        }
    }

    fn cdf(&self, x: f64) -> f64 {
        let num = 1.0 - (-self.rate * (x - self.lower)).exp();
        if self.upper.is_infinite() {
            num
        } else {
            num / (1.0 - (-self.rate * self.len()).exp())
        }
    }
}

/// Mixture of ordered disjoint-support pieces; weights sum to one.
#[derive(Clone, Debug)]
pub struct MixtureDensity {
    weights: Vec<f64>,
    segments: Vec<MixtureSegment>,
}

impl MixtureDensity {
    pub fn new(weights: Vec<f64>, segments: Vec<MixtureSegment>) -> Result<Self, DensityError> {
        if weights.len() != segments.len() || weights.is_empty() {
            return Err(DensityError::BadWeights(f64::NAN));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || weights.iter().any(|w| !(*w > 0.0 && *w < 1.0 + 1e-12)) {
            return Err(DensityError::BadWeights(sum));
        }
        for (i, s) in segments.iter().enumerate() {
            if !(s.rate.is_finite() && s.rate > 0.0) {
                return Err(DensityError::BadRate(s.rate));
            }
            if !(s.lower.is_finite() && s.lower < s.upper) {
                return Err(DensityError::UnorderedSupports);
            }
            if i + 1 < segments.len() && s.upper > segments[i + 1].lower {
                return Err(DensityError::UnorderedSupports);
            }
        }
        Ok(MixtureDensity { weights, segments })
    }

    /// Single exponential piece on [0, inf).
    pub fn exponential(rate: f64) -> Self {
        MixtureDensity {
            weights: vec![1.0],
            segments: vec![MixtureSegment { lower: 0.0, upper: f64::INFINITY, rate }],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn segments(&self) -> &[MixtureSegment] {
        &self.segments
    }

    pub fn density(&self, x: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.segments)
            .filter(|(_, s)| x >= s.lower && x < s.upper)
            .map(|(w, s)| w * s.density(x))
            .sum()
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let mut acc = 0.0;
        for (w, s) in self.weights.iter().zip(&self.segments) {
            if x >= s.upper {
                acc += w;
            } else if x >= s.lower {
                acc += w * s.cdf(x);
                break;
            } else {
                break;
            }
        }
        acc
    }

    /// Quantile function: the piece is chosen by half-open membership of
    /// `alpha` in the cumulative-weight intervals, so a boundary level maps
    /// to the next piece's 0-quantile (the infimum convention).
    pub fn quantile(&self, alpha: f64) -> Result<f64, DensityError> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(DensityError::BadAlpha(alpha));
        }
        let mut acc = 0.0;
        for (w, s) in self.weights.iter().zip(&self.segments) {
            if alpha < acc + w {
                return Ok(s.quantile((alpha - acc) / w));
            }
            acc += w;
        }
        // float round-down of the cumulative sum; land in the last piece
        let last = self.segments.last().unwrap();
        let w = *self.weights.last().unwrap();
        Ok(last.quantile(((alpha - (1.0 - w)) / w).clamp(0.0, 1.0)))
    }

    /// E[f(Z)] by per-segment Gauss-Legendre quadrature (the unbounded tail
    /// is integrated through the substitution x = lower - ln(1-u)/rate).
    pub fn expectation_of(&self, f: impl Fn(f64) -> f64) -> f64 {
        let (nodes, weights) = gauss_legendre_64();
        let mut acc = 0.0;
        for (w, s) in self.weights.iter().zip(&self.segments) {
            if s.upper.is_infinite() {
                // integral over u in (0,1) of f(x(u)) with x(u) the inverse CDF
                for (&xg, &wg) in nodes.iter().zip(weights) {
                    let u = 0.5 * (xg + 1.0);
                    let x = s.lower - (1.0 - u).ln() / s.rate;
                    acc += w * 0.5 * wg * f(x);
                }
            } else {
                let (a, b) = (s.lower, s.upper);
                for (&xg, &wg) in nodes.iter().zip(weights) {
                    let x = 0.5 * (b - a) * xg + 0.5 * (a + b);
                    acc += w * 0.5 * (b - a) * wg * s.density(x) * f(x);
                }
            }
        }
        acc
    }
}

/// Free-function spelling of the quantile operation.
pub fn mixture_quantile(m: &MixtureDensity, alpha: f64) -> Result<f64, DensityError> {
    m.quantile(alpha)
}

/// Quantile gap Q(beta + xi) - Q(beta) and the empirical Lipschitz ratio
/// gap / xi, for confirming the two-sided quantile regularity bounds.
#[derive(Clone, Copy, Debug)]
pub struct QuantileGap {
    pub gap: f64,
    pub ratio: f64,
}

pub fn quantile_gap(m: &MixtureDensity, beta: f64, xi: f64) -> Result<QuantileGap, DensityError> {
    if !(0.0 < beta && beta < 1.0) {
        return Err(DensityError::BadAlpha(beta));
    }
    if !(0.0 < xi && xi < 1.0 - beta) {
        return Err(DensityError::BadXi);
    }
    let gap = m.quantile(beta + xi)? - m.quantile(beta)?;
    Ok(QuantileGap { gap, ratio: gap / xi })
}

/// The mixture for `Z_ab` on `s`: one truncated-exponential segment per
/// population on the divergence-to-root path, then the unbounded root
/// segment. Weight `i` is `exp(-sum tau_j, j<i) - exp(-sum tau_j, j<=i)`.
pub fn pairwise_excess_density(
    s: &SpeciesPhylogeny,
    a: TaxonId,
    b: TaxonId,
) -> Result<MixtureDensity, DensityError> {
    let n = s.num_taxa();
    if a >= n || b >= n {
        return Err(TreeError::UnknownTaxon(a.max(b)).into());
    }
    if a == b {
        return Err(TreeError::NotDistinct.into());
    }
    let topo = s.topology();
    let mut v = topo.lca(topo.leaf_node(a), topo.leaf_node(b));
    let mut chain: Vec<(f64, f64)> = Vec::new(); // (tau, mu) bottom-up
    while v != topo.root() {
        chain.push((s.tau(v), s.mu(v)));
        v = topo.parent(v).unwrap();
    }
    let mut weights = Vec::with_capacity(chain.len() + 1);
    let mut segments = Vec::with_capacity(chain.len() + 1);
    let mut cum_tau = 0.0f64;
    let mut h = 0.0f64;
    for (tau, mu) in chain {
        let w = (-cum_tau).exp() - (-(cum_tau + tau)).exp();
        segments.push(MixtureSegment { lower: h, upper: h + mu * tau, rate: 1.0 / mu });
        weights.push(w);
        cum_tau += tau;
        h += mu * tau;
    }
    weights.push((-cum_tau).exp());
    segments.push(MixtureSegment { lower: h, upper: f64::INFINITY, rate: 1.0 / s.root_mu() });
    MixtureDensity::new(weights, segments)
}

/// 64-point Gauss-Legendre nodes and weights on [-1, 1], generated by
/// Newton iteration on the Legendre polynomial (computed once).
fn gauss_legendre_64() -> (&'static [f64; 64], &'static [f64; 64]) {
    use std::sync::OnceLock;
    static TABLE: OnceLock<([f64; 64], [f64; 64])> = OnceLock::new();
    let t = TABLE.get_or_init(|| {
        let n = 64usize;
        let mut nodes = [0.0f64; 64];
        let mut weights = [0.0f64; 64];
        for i in 0..n {
            // initial guess: Chebyshev-like
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            for _ in 0..100 {
                let (p, dp) = legendre(n, x);
                let dx = p / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            let (_, dp) = legendre(n, x);
            nodes[n - 1 - i] = x;
            weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
        }
        (nodes, weights)
    });
    (&t.0, &t.1)
}

fn legendre(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0f64;
    let mut p1 = x;
    for k in 2..=n {
        let pk = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = pk;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
