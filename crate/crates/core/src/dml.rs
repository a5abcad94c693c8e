//! Deep-metric-loss machinery: positive/negative set construction, hard and
//! soft triplet losses, and the DML-augmented ELBO used at retraining.
//!
//! Function values are min-max normalized to `[0, 1]` over the current
//! labelled set before thresholding, so the weight denominators
//! `f_nu(eta)` and `f_nu(1 - eta)` are meaningful. Triplets are mined by
//! sampling rather than the intractable full triple sum.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::nn::softplus;
use crate::vae::{self, ElboParts, TrainConfig, TrainHistory, VaeError, VaeModel};

/// Triplet-loss hyperparameters. `eta` and `nu` follow the reference setting
/// (0.01 and 0.2); `rho` only matters for the hard loss.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DmlConfig {
    /// Function-value similarity threshold on the normalized scale.
    pub eta: f64,
    /// Smoothing temperature of `f_nu`.
    pub nu: f64,
    /// Hard-loss separation margin.
    pub rho: f64,
    /// Norm order for latent distances.
    pub p: f64,
    /// Triplets sampled per batch during DML retraining.
    pub triplets_per_batch: usize,
}

impl Default for DmlConfig {
    fn default() -> Self {
        Self {
            eta: 0.01,
            nu: 0.2,
            rho: 0.1,
            p: 2.0,
            triplets_per_batch: 64,
        }
    }
}

/// Min-max normalization to `[0, 1]`; a constant value set maps to zeros.
pub fn normalize_values(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi - lo).is_finite() || hi - lo <= 0.0 {
        return vec![0.0; values.len()];
    }
    values.iter().map(|&v| (v - lo) / (hi - lo)).collect()
}

/// Splits indices into positives `{j : |f_b - f_j| < eta}` and negatives
/// `{k : |f_b - f_k| >= eta}` relative to `base_index`, excluding the base.
pub fn split_positive_negative(
    values: &[f64],
    base_index: usize,
    eta: f64,
) -> (Vec<usize>, Vec<usize>) {
    let fb = values[base_index];
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (j, &fj) in values.iter().enumerate() {
        if j == base_index {
            continue;
        }
        if (fb - fj).abs() < eta {
            pos.push(j);
        } else {
            neg.push(j);
        }
    }
    (pos, neg)
}

fn p_norm(v: &[f64], p: f64) -> f64 {
    if p == 2.0 {
        v.iter().map(|&a| a * a).sum::<f64>().sqrt()
    } else {
        v.iter()
            .map(|&a| a.abs().powf(p))
            .sum::<f64>()
            .powf(1.0 / p)
    }
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(&x, &y)| x - y).collect()
}

/// Hard triplet loss `max(0, ||z_b - z_p||_p + rho - ||z_b - z_n||_p)`.
pub fn hard_triplet_loss(z_b: &[f64], z_p: &[f64], z_n: &[f64], rho: f64, p: f64) -> f64 {
    let d_pos = p_norm(&diff(z_b, z_p), p);
    let d_neg = p_norm(&diff(z_b, z_n), p);
    (d_pos + rho - d_neg).max(0.0)
}

/// Smoothing function `f_nu(a) = tanh(a / (2 nu))`.
pub fn smoother(a: f64, nu: f64) -> f64 {
    assert!(nu > 0.0);
    (a / (2.0 * nu)).tanh()
}

/// The attraction/repulsion weights, clamped to `[0, 1]` (the raw ratio goes
/// negative for inputs outside the admissible range).
fn weights(f_i: f64, f_j: f64, f_k: f64, cfg: &DmlConfig) -> (f64, f64) {
    let w_ij = smoother(cfg.eta - (f_i - f_j).abs(), cfg.nu) / smoother(cfg.eta, cfg.nu);
    let w_ik = smoother((f_i - f_k).abs() - cfg.eta, cfg.nu) / smoother(1.0 - cfg.eta, cfg.nu);
    (w_ij.clamp(0.0, 1.0), w_ik.clamp(0.0, 1.0))
}

/// Weighted soft triplet loss
/// `ln(1 + exp(d+ - d-)) w_ij w_ik` under the admissibility indicator
/// `|f_i - f_j| < eta` and `|f_i - f_k| >= eta`; zero otherwise.
///
/// Function values must already be normalized to `[0, 1]` over the current
/// labelled set.
pub fn soft_triplet_loss(
    z_i: &[f64],
    z_j: &[f64],
    z_k: &[f64],
    f_i: f64,
    f_j: f64,
    f_k: f64,
    cfg: &DmlConfig,
) -> f64 {
    soft_triplet_with_zgrads(z_i, z_j, z_k, f_i, f_j, f_k, cfg).0
}

/// Soft triplet loss plus its gradients with respect to the three latent
/// points. Inadmissible triplets return zero loss and zero gradients.
pub(crate) fn soft_triplet_with_zgrads(
    z_i: &[f64],
    z_j: &[f64],
    z_k: &[f64],
    f_i: f64,
    f_j: f64,
    f_k: f64,
    cfg: &DmlConfig,
) -> (f64, [Vec<f64>; 3]) {
    let d = z_i.len();
    let zero = || [vec![0.0; d], vec![0.0; d], vec![0.0; d]];
    if !((f_i - f_j).abs() < cfg.eta && (f_i - f_k).abs() >= cfg.eta) {
        return (0.0, zero());
    }
    let v_pos = diff(z_i, z_j);
    let v_neg = diff(z_i, z_k);
    let d_pos = p_norm(&v_pos, cfg.p);
    let d_neg = p_norm(&v_neg, cfg.p);
    let (w_ij, w_ik) = weights(f_i, f_j, f_k, cfg);
    let w = w_ij * w_ik;
    let s = d_pos - d_neg;
    let loss = softplus(s) * w;

    // dL/ds = sigmoid(s) * w; distance gradients via the p-norm derivative.
    let dls = w / (1.0 + (-s).exp());
    let grad_dist = |v: &[f64], dist: f64| -> Vec<f64> {
        if dist <= 0.0 {
            return vec![0.0; d];
        }
        if cfg.p == 2.0 {
            v.iter().map(|&a| a / dist).collect()
        } else {
            v.iter()
                .map(|&a| a.signum() * a.abs().powf(cfg.p - 1.0) / dist.powf(cfg.p - 1.0))
                .collect()
        }
    };
    let g_pos = grad_dist(&v_pos, d_pos);
    let g_neg = grad_dist(&v_neg, d_neg);
    let mut g_i = vec![0.0; d];
    let mut g_j = vec![0.0; d];
    let mut g_k = vec![0.0; d];
    for l in 0..d {
        g_i[l] = dls * (g_pos[l] - g_neg[l]);
        g_j[l] = -dls * g_pos[l];
        g_k[l] = dls * g_neg[l];
    }
    (loss, [g_i, g_j, g_k])
}

/// One sampled triplet: indices into the batch.
#[derive(Debug, Clone, Copy)]
pub(crate) struct TripletDraw {
    pub base: usize,
    pub pos: usize,
    pub neg: usize,
}

/// Samples up to `triplets_per_batch` admissible triplets: base uniform,
/// positive uniform from its positive set, negative uniform from its
/// negative set. Attempts whose base has an empty side are skipped.
pub(crate) fn sample_triplets(
    f_norm: &[f64],
    cfg: &DmlConfig,
    rng: &mut ChaCha8Rng,
) -> Vec<TripletDraw> {
    let n = f_norm.len();
    if n < 3 || cfg.triplets_per_batch == 0 {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(cfg.triplets_per_batch);
    for _ in 0..cfg.triplets_per_batch {
        let base = rng.random_range(0..n);
        let (pos, neg) = split_positive_negative(f_norm, base, cfg.eta);
        if pos.is_empty() || neg.is_empty() {
            continue;
        }
        let j = pos[rng.random_range(0..pos.len())];
        let k = neg[rng.random_range(0..neg.len())];
        out.push(TripletDraw { base, pos: j, neg: k });
    }
    out
}

/// DML-augmented ELBO over a batch: `recon + beta kl + mean soft-triplet
/// loss` with latent points drawn by reparameterization. `f_norm` carries
/// normalized function values aligned with `batch`.
pub fn dml_elbo(
    model: &VaeModel,
    batch: &[Vec<f64>],
    f_norm: &[f64],
    cfg: &DmlConfig,
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ElboParts, VaeError> {
    Ok(dml_elbo_with_grads(model, batch, f_norm, cfg, beta, rng)?.0)
}

/// [`dml_elbo`] plus the gradient with respect to [`VaeModel::params`].
pub fn dml_elbo_with_grads(
    model: &VaeModel,
    batch: &[Vec<f64>],
    f_norm: &[f64],
    cfg: &DmlConfig,
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(ElboParts, Vec<f64>), VaeError> {
    vae::batch_step(model, batch, beta, Some((cfg, f_norm)), rng)
}

/// Warm-start retraining on a labelled set with the DML objective. Function
/// values are normalized over the full labelled set before batching.
pub fn retrain_dml(
    model: &mut VaeModel,
    labelled: &[(Vec<f64>, f64)],
    train_cfg: &TrainConfig,
    dml_cfg: &DmlConfig,
) -> Result<TrainHistory, VaeError> {
    if labelled.is_empty() {
        return Err(VaeError::EmptyData);
    }
    let xs: Vec<Vec<f64>> = labelled.iter().map(|(x, _)| x.clone()).collect();
    let fs: Vec<f64> = labelled.iter().map(|(_, f)| *f).collect();
    let f_norm = normalize_values(&fs);
    vae::run_training(model, &xs, Some(&f_norm), train_cfg, Some(dml_cfg))
}
