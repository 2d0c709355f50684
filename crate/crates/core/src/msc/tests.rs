use super::*;
use crate::stats;
use crate::streams::StreamKey;
use crate::trees::{parse_species_newick, Shape, Taxon};
use approx::assert_relative_eq;

// frozen oracle values (mpmath, 30 digits)
const DISCORDANT_FREQ_TAU1: f64 = 0.122626480390481; // (1/3) e^{-1}
const LN_5_OVER_4: f64 = 0.22314355131420976;

fn two_leaf_unit() -> SpeciesPhylogeny {
    parse_species_newick("(1:1.0[&mu=1.0],2:1.0[&mu=1.0]);").unwrap()
}

fn three_leaf(tau_int: f64) -> SpeciesPhylogeny {
    parse_species_newick(&format!(
        "((1:1.0[&mu=1.0],2:1.0[&mu=1.0]):{}[&mu=1.0],3:{}[&mu=1.0]);",
        tau_int,
        1.0 + tau_int
    ))
    .unwrap()
}

#[test]
fn two_leaf_delta_mean_matches_shifted_exponential() {
    // delta(1,2) = 2 (1 + E), E ~ Exp(1): mean 4, sd 2
    let s = two_leaf_unit();
    let mut rng = StreamKey::from_seed(101).rng();
    let n = 200_000;
    let mean: f64 = (0..n)
        .map(|_| sample_gene_tree(&s, &mut rng).gene_metric().get(0, 1))
        .sum::<f64>()
        / n as f64;
    let se = 2.0 / (n as f64).sqrt();
    assert!((mean - 4.0).abs() < 3.0 * se, "mean={mean}");
}

#[test]
fn three_leaf_discordance_matches_coalescent_identity() {
    let s = three_leaf(1.0);
    let mut rng = StreamKey::from_seed(102).rng();
    let n = 200_000usize;
    let mut counts = [0u64; 3]; // 12|3, 13|2, 23|1
    for _ in 0..n {
        let g = sample_gene_tree(&s, &mut rng);
        match g.topology().triplet(0, 1, 2).unwrap() {
            t if t == crate::TripletTopology::resolved(0, 1, 2) => counts[0] += 1,
            t if t == crate::TripletTopology::resolved(0, 2, 1) => counts[1] += 1,
            _ => counts[2] += 1,
        }
    }
    let se = stats::binomial_se(DISCORDANT_FREQ_TAU1, n);
    for &c in &counts[1..] {
        let freq = c as f64 / n as f64;
        assert!(
            (freq - DISCORDANT_FREQ_TAU1).abs() < 4.0 * se,
            "freq={freq} expected={DISCORDANT_FREQ_TAU1}"
        );
    }
}

#[test]
fn long_internal_branch_kills_discordance() {
    let s = three_leaf(20.0);
    let mut rng = StreamKey::from_seed(103).rng();
    for _ in 0..10_000 {
        let g = sample_gene_tree(&s, &mut rng);
        assert_eq!(
            g.topology().triplet(0, 1, 2).unwrap(),
            crate::TripletTopology::resolved(0, 1, 2)
        );
    }
}

#[test]
fn coalesce_single_lineage_extends_root_edge() {
    let mut rng = StreamKey::from_seed(104).rng();
    let f = coalesce(Forest::leaf(0), Forest::default(), 2.5, 0.4, &mut rng);
    assert_eq!(f.num_lineages(), 1);
    assert_relative_eq!(f.lineages()[0].pending(), 1.0, epsilon = 1e-15);
}

/// Child edge length of the (single) merge in a fully coalesced pair
/// forest: with unit rate and zero prior pending, this is the merge time.
fn merge_edge(f: &Forest) -> f64 {
    f.lineages()[0].node.children[0].1
}

#[test]
fn coalesce_pair_merge_time_is_unit_exponential() {
    let mut rng = StreamKey::from_seed(105).rng();
    let n = 100_000;
    let mut times: Vec<f64> = (0..n)
        .map(|_| {
            let f = coalesce(Forest::leaf(0), Forest::leaf(1), f64::INFINITY, 1.0, &mut rng);
            assert_eq!(f.num_lineages(), 1);
            merge_edge(&f)
        })
        .collect();
    times.sort_by(|a, b| a.total_cmp(b));
    let d = stats::ks_statistic(&times, |x| 1.0 - (-x).exp());
    assert!(d < stats::ks_critical_99(n), "ks={d}");
}

#[test]
fn coalesce_death_chain_matches_matrix_exponential() {
    // 3 lineages in a population of length tau: survivor-count distribution
    // vs exp(Q tau) for the pure-death chain 3 ->(rate 3) 2 ->(rate 1) 1.
    let tau = 0.7;
    let probs = death_chain_expm(tau);
    let mut rng = StreamKey::from_seed(106).rng();
    let n = 100_000usize;
    let mut counts = [0u64; 3];
    for _ in 0..n {
        let f12 = coalesce(Forest::leaf(0), Forest::leaf(1), 0.0, 1.0, &mut rng);
        let f = coalesce(f12, Forest::leaf(2), tau, 1.0, &mut rng);
        counts[f.num_lineages() - 1] += 1;
    }
    for k in 0..3 {
        let freq = counts[k] as f64 / n as f64;
        let se = stats::binomial_se(probs[k], n);
        assert!(
            (freq - probs[k]).abs() < 4.0 * se,
            "k={} freq={} expected={}",
            k + 1,
            freq,
            probs[k]
        );
    }
}

/// Matrix exponential of the death-chain generator by scaling and squaring
/// with a Taylor series; returns [P(1 survivor), P(2), P(3)].
fn death_chain_expm(t: f64) -> [f64; 3] {
    // states ordered (3, 2, 1); generator rows sum to zero
    let q = [[-3.0, 3.0, 0.0], [0.0, -1.0, 1.0], [0.0, 0.0, 0.0]];
    let scale = 32u32;
    let h = t / scale as f64;
    // expm(Q h) by 12-term Taylor
    let mut term = eye();
    let mut acc = eye();
    for k in 1..=12 {
        term = mat_mul(&term, &mat_scale(&q, h / k as f64));
        acc = mat_add(&acc, &term);
    }
    let mut p = acc;
    for _ in 0..5 {
        p = mat_mul(&p, &p);
    }
    // start in state "3 lineages" (row 0); report as [P1, P2, P3]
    [p[0][2], p[0][1], p[0][0]]
}

type M3 = [[f64; 3]; 3];

fn eye() -> M3 {
    [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]
}

fn mat_mul(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                c[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    c
}

fn mat_add(a: &M3, b: &M3) -> M3 {
    let mut c = *a;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] += b[i][j];
        }
    }
    c
}

fn mat_scale(a: &M3, s: f64) -> M3 {
    let mut c = *a;
    for row in &mut c {
        for v in row {
            *v *= s;
        }
    }
    c
}

#[test]
fn exchangeability_first_pair_uniform() {
    // j = 3 lineages: each of the 3 pairs coalesces first equally often
    let mut rng = StreamKey::from_seed(107).rng();
    let n = 100_000usize;
    let mut counts = [0u64; 3];
    for _ in 0..n {
        let f12 = coalesce(Forest::leaf(0), Forest::leaf(1), 0.0, 1.0, &mut rng);
        let f = coalesce(f12, Forest::leaf(2), f64::INFINITY, 1.0, &mut rng);
        let pair = first_merge_pair(&f);
        counts[match pair {
            (0, 1) => 0,
            (0, 2) => 1,
            _ => 2,
        }] += 1;
    }
    let expected = vec![n as f64 / 3.0; 3];
    let stat = stats::chi_square_stat(&counts, &expected);
    assert!(stat < stats::chi_square_crit_99(2), "chi2={stat}");
}

/// Taxa of the deepest merge in a fully coalesced 3-leaf forest.
fn first_merge_pair(f: &Forest) -> (usize, usize) {
    fn find(b: &BuildNode) -> Option<(usize, usize)> {
        if b.children.is_empty() {
            return None;
        }
        for (c, _) in &b.children {
            if let Some(p) = find(c) {
                return Some(p);
            }
        }
        let mut leaves: Vec<usize> = vec![];
        fn collect(b: &BuildNode, out: &mut Vec<usize>) {
            if let Some(t) = b.taxon {
                out.push(t);
            }
            for (c, _) in &b.children {
                collect(c, out);
            }
        }
        for (c, _) in &b.children {
            let mut l = vec![];
            collect(c, &mut l);
            if l.len() == 1 {
                leaves.push(l[0]);
            } else {
                return None;
            }
        }
        leaves.sort_unstable();
        Some((leaves[0], leaves[1]))
    }
    find(&f.lineages()[0].node).expect("three-leaf forest has a cherry")
}

#[test]
fn memorylessness_of_residual_coalescence_time() {
    let mut rng = StreamKey::from_seed(108).rng();
    let n = 60_000usize;
    let mut residual = Vec::with_capacity(n);
    while residual.len() < n {
        let f = coalesce(Forest::leaf(0), Forest::leaf(1), 0.5, 1.0, &mut rng);
        if f.num_lineages() == 2 {
            // survived the branch; continue in an unbounded population
            let mut it = { f }.lineages.into_iter();
            let a = it.next().unwrap();
            let b = it.next().unwrap();
            let g = coalesce(
                Forest { lineages: vec![a] },
                Forest { lineages: vec![b] },
                f64::INFINITY,
                1.0,
                &mut rng,
            );
            // merge time = child edge length minus the 0.5 already accrued
            residual.push(merge_edge(&g) - 0.5);
        }
    }
    let mut unconditional: Vec<f64> = (0..n)
        .map(|_| {
            let g = coalesce(Forest::leaf(0), Forest::leaf(1), f64::INFINITY, 1.0, &mut rng);
            merge_edge(&g)
        })
        .collect();
    residual.sort_by(|a, b| a.total_cmp(b));
    unconditional.sort_by(|a, b| a.total_cmp(b));
    let d = stats::ks_two_sample(&residual, &unconditional);
    assert!(d < stats::ks_two_sample_critical_99(n, n), "ks={d}");
}

#[test]
fn sampled_gene_metric_dominates_species_metric() {
    let s = three_leaf(0.3);
    let mu = s.species_metric();
    let mut rng = StreamKey::from_seed(109).rng();
    for _ in 0..2_000 {
        let g = sample_gene_tree(&s, &mut rng);
        let d = g.gene_metric();
        for a in 0..3 {
            for b in (a + 1)..3 {
                assert!(d.get(a, b) >= mu.get(a, b) - 1e-12);
            }
        }
    }
}

#[test]
fn excess_trace_consistent_with_populations() {
    // cherry coalescence in the internal population implies z <= weighted
    // internal length; coalescence in the root population implies z >= it.
    let s = three_leaf(0.8);
    let internal_weighted = 0.8;
    let mut rng = StreamKey::from_seed(110).rng();
    let mut below = 0u64;
    let n = 20_000;
    for _ in 0..n {
        let sg = sample_gene_tree_traced(&s, &mut rng);
        let excess = CoalescentExcess::from_sample(&s, &sg.tree);
        let z = excess.z(0, 1);
        assert_relative_eq!(
            sg.tree.gene_metric().get(0, 1),
            s.species_metric().get(0, 1) + 2.0 * z,
            epsilon = 1e-12
        );
        match sg.pair_population(0, 1) {
            Population::Edge(_) => {
                below += 1;
                assert!(z <= internal_weighted + 1e-12);
            }
            Population::Root => assert!(z >= internal_weighted - 1e-12),
        }
        assert_eq!(sg.pair_population(0, 2), Population::Root);
    }
    // below-root frequency matches the first mixture weight 1 - e^{-tau}
    let m = pairwise_excess_density(&s, 0, 1).unwrap();
    let w1 = m.weights()[0];
    assert_relative_eq!(w1, 1.0 - (-0.8f64).exp(), epsilon = 1e-12);
    let freq = below as f64 / n as f64;
    assert!((freq - w1).abs() < 4.0 * stats::binomial_se(w1, n as usize));
}

#[test]
fn log_density_single_population_cases() {
    // two lineages, coalescence at t: log density -t
    let lp = population_log_density(2, &[0.9], f64::INFINITY, Population::Root).unwrap();
    assert_relative_eq!(lp, -0.9, epsilon = 1e-15);
    // three lineages at t1 < t2: -3 t1 - (t2 - t1)
    let lp = population_log_density(3, &[0.2, 0.9], f64::INFINITY, Population::Root).unwrap();
    assert_relative_eq!(lp, -3.0 * 0.2 - 0.7, epsilon = 1e-12);
    // bounded branch with no coalescence still pays the survival factor
    let lp = population_log_density(2, &[], 1.5, Population::Edge(0)).unwrap();
    assert_relative_eq!(lp, -1.5, epsilon = 1e-15);
    // inconsistent times
    assert!(population_log_density(2, &[2.0], 1.5, Population::Edge(0)).is_err());
    assert!(population_log_density(3, &[0.9, 0.2], f64::INFINITY, Population::Root).is_err());
    assert!(population_log_density(2, &[0.1, 0.2], f64::INFINITY, Population::Root).is_err());
}

#[test]
fn log_density_integrates_to_one_by_quadrature() {
    // 3 lineages in one unbounded population; integrate exp(log density)
    // over 0 < t1 < t2 with composite Simpson and multiply by the 3 equally
    // likely first-pair choices.
    let f = |t1: f64, t2: f64| {
        population_log_density(3, &[t1, t2], f64::INFINITY, Population::Root)
            .unwrap()
            .exp()
    };
    // substitute u = t2 - t1 so the domain is a rectangle
    let t1_max = 14.0;
    let u_max = 36.0;
    let n1 = 1200usize;
    let nu = 1200usize;
    let h1 = t1_max / n1 as f64;
    let hu = u_max / nu as f64;
    let simpson_w = |i: usize, n: usize| -> f64 {
        if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        }
    };
    let mut acc = 0.0;
    for i in 0..=n1 {
        let t1 = i as f64 * h1;
        let wi = simpson_w(i, n1);
        let mut inner = 0.0;
        for j in 0..=nu {
            let u = j as f64 * hu;
            inner += simpson_w(j, nu) * f(t1, t1 + u);
        }
        acc += wi * inner * hu / 3.0;
    }
    acc *= h1 / 3.0;
    let integral = 3.0 * acc;
    assert!((integral - 1.0).abs() < 1e-6, "integral={integral}");
}

#[test]
fn log_density_full_tree_accumulates_populations() {
    let s = three_leaf(0.8);
    let topo = s.topology();
    let internal = topo.parent(topo.leaf_node(0)).unwrap();
    let mut times = CoalescenceTimes {
        per_edge: vec![vec![]; topo.node_count()],
        root: vec![0.4],
    };
    times.per_edge[internal] = vec![0.25];
    // leaf branches: single lineage, no contribution; internal: 2 lineages
    // coalescing at 0.25; root: 2 lineages coalescing at 0.4
    let lp = gene_tree_log_density(&s, &times).unwrap();
    assert_relative_eq!(lp, -0.25 - 0.4, epsilon = 1e-12);
    // no internal coalescence: pay survival over the whole branch, root has
    // 3 lineages then 2
    let mut times = CoalescenceTimes {
        per_edge: vec![vec![]; topo.node_count()],
        root: vec![0.1, 0.5],
    };
    times.per_edge[internal] = vec![];
    let lp = gene_tree_log_density(&s, &times).unwrap();
    assert_relative_eq!(lp, -0.8 - 3.0 * 0.1 - 0.4, epsilon = 1e-12);
    // root must fully coalesce
    times.root = vec![0.1];
    assert!(matches!(
        gene_tree_log_density(&s, &times),
        Err(MscError::IncompleteRoot { .. })
    ));
}

#[test]
fn excess_density_two_leaf_is_unit_exponential() {
    let s = two_leaf_unit();
    let m = pairwise_excess_density(&s, 0, 1).unwrap();
    assert_eq!(m.segments().len(), 1);
    for x in [0.0, 0.3, 1.7, 4.0] {
        assert_relative_eq!(m.density(x), (-x).exp(), epsilon = 1e-12);
        assert_relative_eq!(m.cdf(x), 1.0 - (-x).exp(), epsilon = 1e-12);
    }
}

#[test]
fn excess_density_matches_empirical_cdf() {
    let s = parse_species_newick(
        "((1:1.0[&mu=0.45],2:1.0[&mu=0.15]):0.2[&mu=0.25],3:1.2[&mu=0.29166666666666666])[&mu=0.15];",
    )
    .unwrap();
    let mut rng = StreamKey::from_seed(111).rng();
    let n = 100_000usize;
    let mu = s.species_metric();
    let mut z01 = Vec::with_capacity(n);
    let mut z02 = Vec::with_capacity(n);
    for _ in 0..n {
        let g = sample_gene_tree(&s, &mut rng);
        let d = g.gene_metric();
        z01.push((d.get(0, 1) - mu.get(0, 1)) / 2.0);
        z02.push((d.get(0, 2) - mu.get(0, 2)) / 2.0);
    }
    z01.sort_by(|a, b| a.total_cmp(b));
    z02.sort_by(|a, b| a.total_cmp(b));
    let band = stats::dkw_band(n, 0.01);
    let m01 = pairwise_excess_density(&s, 0, 1).unwrap();
    let m02 = pairwise_excess_density(&s, 0, 2).unwrap();
    assert!(stats::ks_statistic(&z01, |x| m01.cdf(x)) < band);
    assert!(stats::ks_statistic(&z02, |x| m02.cdf(x)) < band);
}

#[test]
fn quantile_closed_forms_and_boundary() {
    let m = MixtureDensity::exponential(2.0);
    assert_relative_eq!(m.quantile(0.0).unwrap(), 0.0, epsilon = 1e-15);
    for alpha in [0.1, 0.5, 0.9] {
        assert_relative_eq!(
            m.quantile(alpha).unwrap(),
            -(1.0f64 - alpha).ln() / 2.0,
            epsilon = 1e-12
        );
    }
    assert!(m.quantile(1.0).is_err());
    assert!(m.quantile(-0.1).is_err());

    // boundary level selects the next piece's 0-quantile (infimum rule)
    let m = MixtureDensity::new(
        vec![0.25, 0.75],
        vec![
            MixtureSegment { lower: 0.0, upper: 1.0, rate: 1.0 },
            MixtureSegment { lower: 2.0, upper: f64::INFINITY, rate: 1.0 },
        ],
    )
    .unwrap();
    assert_relative_eq!(m.quantile(0.25).unwrap(), 2.0, epsilon = 1e-15);
    assert!(m.quantile(0.25 - 1e-9).unwrap() < 1.0);
}

#[test]
fn quantile_matches_independent_process_sampler() {
    // 3-piece mixture: the cherry pair of a 4-leaf caterpillar crosses two
    // bounded populations before the root.
    let s = parse_species_newick(
        "(((1:1[&mu=0.3],2:1[&mu=0.2]):0.5[&mu=0.4],3:1.5[&mu=0.3]):0.7[&mu=0.6],4:2.2[&mu=0.5])[&mu=0.35];",
    )
    .unwrap();
    let m = pairwise_excess_density(&s, 0, 1).unwrap();
    assert_eq!(m.segments().len(), 3);
    // independent sampler: walk the populations directly
    let mut rng = StreamKey::from_seed(112).rng();
    let pops = [(0.5, 0.4), (0.7, 0.6), (f64::INFINITY, 0.35)];
    let n = 1_000_000usize;
    let mut zs: Vec<f64> = (0..n)
        .map(|_| {
            let mut h = 0.0;
            for &(tau, mu) in &pops {
                let t = crate::streams::exp_draw(&mut rng, 1.0);
                if t < tau {
                    return h + mu * t;
                }
                h += mu * tau;
            }
            unreachable!("last population is unbounded")
        })
        .collect();
    zs.sort_by(|a, b| a.total_cmp(b));
    for alpha in [0.1, 0.37, 0.5, 0.9] {
        let q = m.quantile(alpha).unwrap();
        let emp = zs[((alpha * n as f64) as usize).min(n - 1)];
        assert!((q - emp).abs() < 1e-2, "alpha={alpha} q={q} emp={emp}");
    }
    // and the full CDF within the DKW band
    assert!(stats::ks_statistic(&zs, |x| m.cdf(x)) < stats::dkw_band(n, 0.01));
}

#[test]
fn quantile_inverts_cdf_on_segments() {
    let s = three_leaf(0.8);
    let m = pairwise_excess_density(&s, 0, 1).unwrap();
    for seg in m.segments() {
        let hi = if seg.upper.is_finite() { seg.upper } else { seg.lower + 5.0 };
        let mut x = seg.lower + 1e-6;
        while x < hi - 1e-6 {
            let back = m.quantile(m.cdf(x)).unwrap();
            assert!((back - x).abs() < 1e-10, "x={x} back={back}");
            x += (hi - seg.lower) / 23.0;
        }
    }
}

#[test]
fn quantile_gap_closed_form_and_derivative_limit() {
    let m = MixtureDensity::exponential(1.0);
    let g = quantile_gap(&m, 0.5, 0.1).unwrap();
    assert_relative_eq!(g.gap, LN_5_OVER_4, epsilon = 1e-12);
    // xi -> 0: ratio -> 1 / f(Q(beta))
    let g = quantile_gap(&m, 0.5, 1e-9).unwrap();
    let q = m.quantile(0.5).unwrap();
    assert_relative_eq!(g.ratio, 1.0 / m.density(q), epsilon = 1e-5);
    assert!(quantile_gap(&m, 0.5, 0.6).is_err());
    assert!(quantile_gap(&m, 0.0, 0.1).is_err());
}

#[test]
fn quantile_gap_ratio_within_density_band() {
    let s = three_leaf(0.8);
    let m = pairwise_excess_density(&s, 0, 1).unwrap();
    let beta = 0.3;
    for xi in [0.05, 0.1, 0.2, 0.4] {
        let g = quantile_gap(&m, beta, xi).unwrap();
        // grid the density over [Q(beta), Q(beta+xi)]
        let (a, b) = (m.quantile(beta).unwrap(), m.quantile(beta + xi).unwrap());
        let mut fmin = f64::INFINITY;
        let mut fmax: f64 = 0.0;
        for i in 0..=1000 {
            let x = a + (b - a) * i as f64 / 1000.0;
            let d = m.density(x);
            if d > 0.0 {
                fmin = fmin.min(d);
                fmax = fmax.max(d);
            }
        }
        assert!(
            g.ratio >= 1.0 / fmax - 1e-9 && g.ratio <= 1.0 / fmin + 1e-9,
            "xi={xi} ratio={} band=({}, {})",
            g.ratio,
            1.0 / fmax,
            1.0 / fmin
        );
    }
}

#[test]
fn expectation_quadrature_matches_monte_carlo() {
    let s = three_leaf(0.8);
    let m = pairwise_excess_density(&s, 0, 1).unwrap();
    let mean_q = m.expectation_of(|z| z);
    let mut rng = StreamKey::from_seed(113).rng();
    let n = 200_000;
    let mu = s.species_metric();
    let mean_mc: f64 = (0..n)
        .map(|_| (sample_gene_tree(&s, &mut rng).gene_metric().get(0, 1) - mu.get(0, 1)) / 2.0)
        .sum::<f64>()
        / n as f64;
    assert!((mean_q - mean_mc).abs() < 0.01, "q={mean_q} mc={mean_mc}");
    // density integrates to one
    assert_relative_eq!(m.expectation_of(|_| 1.0), 1.0, epsilon = 1e-9);
}

#[test]
fn traced_sample_reports_populations() {
    let s = three_leaf(5.0);
    let mut rng = StreamKey::from_seed(114).rng();
    let sg = sample_gene_tree_traced(&s, &mut rng);
    assert_eq!(sg.tree.taxa().len(), 3);
    // with a long internal branch the cherry almost surely merges below
    assert!(matches!(sg.pair_population(0, 1), Population::Edge(_)));
    assert_eq!(sg.pair_population(0, 2), Population::Root);
    assert!(sg.shared_cross_coalescence(0, 1, 2));
}

#[test]
fn forests_can_be_built_from_parts() {
    let taxa: Vec<Taxon> = (0..2)
        .map(|i| Taxon { id: i, label: format!("{}", i + 1) })
        .collect();
    let shape = Shape::Node(vec![Shape::Leaf(0), Shape::Leaf(1)]);
    let _ = RootedTopology::from_shape(&shape, taxa).unwrap();
}
