//! Expected-improvement acquisition and its maximization over a box region.
//!
//! Minimization orientation throughout: improvement is measured below the
//! incumbent minimum. The inner maximizer seeds with uniform samples, then
//! polishes the best few with coordinate-wise pattern search (gradient-free,
//! so no kernel derivatives are needed).

use rand::Rng;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::domain::BoxDomain;
use crate::gp::GpPosterior;

/// Inner-maximization knobs. Counts must be positive, `n_refine <= n_raw`.
#[derive(Debug, Clone)]
pub struct AcqConfig {
    /// Uniform seed samples in the region.
    pub n_raw: usize,
    /// Best-by-EI candidates polished locally.
    pub n_refine: usize,
    /// Pattern-search sweeps per candidate.
    pub max_local_steps: usize,
    /// Absolute step tolerance terminating a polish run.
    pub tol: f64,
    pub seed: u64,
}

impl Default for AcqConfig {
    fn default() -> Self {
        Self {
            n_raw: 512,
            n_refine: 8,
            max_local_steps: 100,
            tol: 1e-8,
            seed: 0,
        }
    }
}

/// Expected improvement below `best` for a Gaussian posterior `N(mean, std^2)`:
/// `EI = (best - mean) Phi(z) + std phi(z)`, `z = (best - mean)/std`,
/// and exactly 0 when `std = 0`.
pub fn expected_improvement(mean: f64, std: f64, best: f64) -> f64 {
    debug_assert!(std >= 0.0);
    if std <= 0.0 {
        return 0.0;
    }
    let normal = Normal::standard();
    let z = (best - mean) / std;
    let ei = (best - mean) * normal.cdf(z) + std * normal.pdf(z);
    ei.max(0.0)
}

fn ei_at(gp: &GpPosterior, best: f64, x: &[f64]) -> f64 {
    let (mean, var) = gp.posterior(x);
    expected_improvement(mean, var.sqrt(), best)
}

/// Maximizes EI over `region`: `n_raw` uniform seeds ranked by EI, then
/// `n_refine` pattern-search polish runs clipped to the region. Deterministic
/// given the seed; argmax ties break toward the lowest sample index.
pub fn maximize_acquisition(gp: &GpPosterior, region: &BoxDomain, cfg: &AcqConfig) -> Vec<f64> {
    assert_eq!(gp.dim(), region.dim(), "GP and region dimensions must agree");
    let center = region.center();
    if (0..region.dim()).any(|i| region.side(i) < 1e-12) {
        return center;
    }
    let n_raw = cfg.n_raw.max(1);
    let n_refine = cfg.n_refine.min(n_raw);
    let best = gp.min_target();

    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(cfg.seed);
    use rand::SeedableRng;
    let samples: Vec<Vec<f64>> = (0..n_raw).map(|_| region.sample_uniform(&mut rng)).collect();
    let scored: Vec<f64> = gp
        .posterior_batch(&samples)
        .into_iter()
        .map(|(m, v)| expected_improvement(m, v.sqrt(), best))
        .collect();

    let mut order: Vec<usize> = (0..n_raw).collect();
    order.sort_by(|&a, &b| {
        scored[b]
            .partial_cmp(&scored[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });

    // (ei, original sample index, point); the raw best is always a candidate.
    let mut finalists: Vec<(f64, usize, Vec<f64>)> = Vec::with_capacity(n_refine + 1);
    if let Some(&i0) = order.first() {
        finalists.push((scored[i0], i0, samples[i0].clone()));
    }
    for &idx in order.iter().take(n_refine) {
        let (point, ei) = pattern_search(gp, region, best, samples[idx].clone(), scored[idx], cfg);
        finalists.push((ei, idx, point));
    }

    finalists
        .into_iter()
        .max_by(|a, b| {
            a.0.partial_cmp(&b.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(b.1.cmp(&a.1))
        })
        .map(|(_, _, p)| p)
        .unwrap_or(center)
}

/// Coordinate-wise compass search with shrinking steps, clipped to the region.
fn pattern_search(
    gp: &GpPosterior,
    region: &BoxDomain,
    best: f64,
    start: Vec<f64>,
    start_ei: f64,
    cfg: &AcqConfig,
) -> (Vec<f64>, f64) {
    let dim = start.len();
    let mut steps: Vec<f64> = (0..dim).map(|i| 0.1 * region.side(i)).collect();
    let mut x = start;
    let mut fx = start_ei;
    for _ in 0..cfg.max_local_steps {
        if steps.iter().all(|&s| s < cfg.tol) {
            break;
        }
        let mut improved = false;
        for i in 0..dim {
            let mut probe = |dir: f64, x: &[f64]| {
                let mut cand = x.to_vec();
                cand[i] = (cand[i] + dir * steps[i]).clamp(region.lo()[i], region.hi()[i]);
                let ei = ei_at(gp, best, &cand);
                (cand, ei)
            };
            let (cp, ep) = probe(1.0, &x);
            let (cm, em) = probe(-1.0, &x);
            if ep > fx && ep >= em {
                x = cp;
                fx = ep;
                improved = true;
            } else if em > fx {
                x = cm;
                fx = em;
                improved = true;
            }
        }
        if !improved {
            for s in &mut steps {
                *s *= 0.5;
            }
        }
    }
    (x, fx)
}
