//! Variational autoencoder: encoding, reparameterized sampling, decoding,
//! the ELBO with beta-annealing, pre-training, warm-start retraining, and
//! correlated training-data generation.
//!
//! The encoder is a single MLP whose final linear layer emits `2d` values:
//! the first `d` are the posterior mean, the last `d` the log-variance.
//! The decoder observation variance is fixed at 1, so the reconstruction
//! term is a plain half-squared error.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dml::{self, DmlConfig};
use crate::domain::BoxDomain;
use crate::nn::{AdamState, Mlp, MlpGrads, NnError};

#[derive(Debug, Error)]
pub enum VaeError {
    #[error("encoder and decoder widths disagree: encoder {encoder:?}, decoder {decoder:?}")]
    ArchitectureMismatch {
        encoder: Vec<usize>,
        decoder: Vec<usize>,
    },
    #[error("latent dimension {latent} must be below the ambient dimension {ambient}")]
    LatentTooLarge { latent: usize, ambient: usize },
    #[error("input dimension mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("training data is empty")]
    EmptyData,
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// KL weight schedule: `beta` starts at `beta_i` and grows by `beta_a` every
/// `beta_s` epochs until it reaches `beta_f`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BetaSchedule {
    pub beta_i: f64,
    pub beta_f: f64,
    pub beta_s: usize,
    pub beta_a: f64,
}

impl Default for BetaSchedule {
    fn default() -> Self {
        Self {
            beta_i: 0.0,
            beta_f: 1.0,
            beta_s: 10,
            beta_a: 0.1,
        }
    }
}

impl BetaSchedule {
    /// Beta at a zero-based epoch index, clamped to `[beta_i, beta_f]`.
    pub fn beta_at(&self, epoch: usize) -> f64 {
        assert!(self.beta_s >= 1);
        let stepped = self.beta_i + (epoch / self.beta_s) as f64 * self.beta_a;
        stepped.clamp(self.beta_i, self.beta_f)
    }
}

/// Training configuration for [`train`] and [`retrain`].
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    pub seed: u64,
    /// `None` trains with a fixed beta of 1 (no annealing).
    pub schedule: Option<BetaSchedule>,
}

impl TrainConfig {
    pub fn pretrain(epochs: usize, batch: usize, seed: u64) -> Self {
        Self {
            epochs,
            batch,
            lr: 1e-3,
            seed,
            schedule: Some(BetaSchedule::default()),
        }
    }

    /// The retraining setting: 2 epochs, lr 1e-3, no annealing.
    pub fn retrain_default(batch: usize, seed: u64) -> Self {
        Self {
            epochs: 2,
            batch,
            lr: 1e-3,
            seed,
            schedule: None,
        }
    }

    fn beta_at(&self, epoch: usize) -> f64 {
        self.schedule.map_or(1.0, |s| s.beta_at(epoch))
    }
}

/// Encoder/decoder pair with diagonal-Gaussian latent posterior.
#[derive(Debug, Clone)]
pub struct VaeModel {
    encoder: Mlp,
    decoder: Mlp,
    ambient_dim: usize,
    latent_dim: usize,
}

impl VaeModel {
    /// Builds a model from layer-width lists, e.g. encoder `[100, 30, 2]`
    /// with decoder `[2, 30, 100]`. The encoder's final layer is widened to
    /// `2d` internally to hold the mean and log-variance heads.
    pub fn new(encoder_widths: &[usize], decoder_widths: &[usize], seed: u64) -> Result<Self, VaeError> {
        if encoder_widths.len() < 2
            || decoder_widths.len() < 2
            || encoder_widths.first() != decoder_widths.last()
            || encoder_widths.last() != decoder_widths.first()
        {
            return Err(VaeError::ArchitectureMismatch {
                encoder: encoder_widths.to_vec(),
                decoder: decoder_widths.to_vec(),
            });
        }
        let ambient = encoder_widths[0];
        let latent = *encoder_widths.last().unwrap();
        if latent >= ambient {
            return Err(VaeError::LatentTooLarge {
                latent,
                ambient,
            });
        }
        let mut enc_w = encoder_widths.to_vec();
        *enc_w.last_mut().unwrap() = 2 * latent;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        use rand::SeedableRng;
        Ok(Self {
            encoder: Mlp::new(&enc_w, &mut rng),
            decoder: Mlp::new(decoder_widths, &mut rng),
            ambient_dim: ambient,
            latent_dim: latent,
        })
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient_dim
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim
    }

    pub fn encoder(&self) -> &Mlp {
        &self.encoder
    }

    pub fn decoder(&self) -> &Mlp {
        &self.decoder
    }

    /// Posterior parameters `(mu, sigma^2)` at `x`; the variance head is
    /// exponentiated so it is strictly positive.
    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>), VaeError> {
        if x.len() != self.ambient_dim {
            return Err(VaeError::ShapeMismatch {
                expected: self.ambient_dim,
                got: x.len(),
            });
        }
        let (out, _) = self.encoder.forward(x)?;
        let (mu, logv) = out.split_at(self.latent_dim);
        Ok((mu.to_vec(), logv.iter().map(|&v| v.exp()).collect()))
    }

    /// Posterior mean, the latent representation used for optimization.
    pub fn encode_mean(&self, x: &[f64]) -> Result<Vec<f64>, VaeError> {
        Ok(self.encode(x)?.0)
    }

    /// Deterministic decoder mean `f(z)`.
    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>, VaeError> {
        if z.len() != self.latent_dim {
            return Err(VaeError::ShapeMismatch {
                expected: self.latent_dim,
                got: z.len(),
            });
        }
        Ok(self.decoder.forward(z)?.0)
    }

    /// Flattened encoder-then-decoder parameters.
    pub fn params(&self) -> Vec<f64> {
        let mut p = self.encoder.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn set_params(&mut self, params: &[f64]) -> Result<(), VaeError> {
        let n_enc = self.encoder.n_params();
        if params.len() != n_enc + self.decoder.n_params() {
            return Err(VaeError::ShapeMismatch {
                expected: n_enc + self.decoder.n_params(),
                got: params.len(),
            });
        }
        self.encoder.set_params(&params[..n_enc])?;
        self.decoder.set_params(&params[n_enc..])?;
        Ok(())
    }

    /// Saves `<path>.bin` (both networks, flat binary) and `<path>.json`
    /// (architecture metadata sidecar).
    pub fn save_checkpoint(&self, path: &Path, train_seed: u64) -> Result<(), VaeError> {
        let mut blob = Vec::new();
        blob.extend_from_slice(VAE_MAGIC);
        self.encoder.save(&mut blob)?;
        self.decoder.save(&mut blob)?;
        std::fs::write(path.with_extension("bin"), blob)?;
        let meta = CheckpointMeta {
            ambient_dim: self.ambient_dim,
            latent_dim: self.latent_dim,
            encoder_widths: self.encoder.widths(),
            decoder_widths: self.decoder.widths(),
            activation: "softplus".to_string(),
            train_seed,
        };
        let json = serde_json::to_string_pretty(&meta)
            .map_err(|e| VaeError::Checkpoint(e.to_string()))?;
        std::fs::write(path.with_extension("json"), json)?;
        Ok(())
    }

    pub fn load_checkpoint(path: &Path) -> Result<(Self, CheckpointMeta), VaeError> {
        let blob = std::fs::read(path.with_extension("bin"))?;
        if blob.len() < VAE_MAGIC.len() || &blob[..VAE_MAGIC.len()] != VAE_MAGIC {
            return Err(VaeError::Checkpoint("bad checkpoint magic".into()));
        }
        let mut cursor = &blob[VAE_MAGIC.len()..];
        let encoder = Mlp::load(&mut cursor)?;
        let decoder = Mlp::load(&mut cursor)?;
        let meta: CheckpointMeta =
            serde_json::from_str(&std::fs::read_to_string(path.with_extension("json"))?)
                .map_err(|e| VaeError::Checkpoint(e.to_string()))?;
        let latent = decoder.input_dim();
        let ambient = decoder.output_dim();
        if encoder.output_dim() != 2 * latent || encoder.input_dim() != ambient {
            return Err(VaeError::Checkpoint("network shapes are inconsistent".into()));
        }
        if meta.ambient_dim != ambient || meta.latent_dim != latent {
            return Err(VaeError::Checkpoint("sidecar disagrees with binary".into()));
        }
        Ok((
            Self {
                encoder,
                decoder,
                ambient_dim: ambient,
                latent_dim: latent,
            },
            meta,
        ))
    }
}

const VAE_MAGIC: &[u8; 8] = b"LSBOVAE1";

/// Checkpoint sidecar: enough to rebuild and to audit provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub ambient_dim: usize,
    pub latent_dim: usize,
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    pub activation: String,
    pub train_seed: u64,
}

/// `z = mu + sqrt(sigma^2) * xi`, elementwise.
pub fn reparameterize(mu: &[f64], sigma2: &[f64], noise: &[f64]) -> Vec<f64> {
    debug_assert_eq!(mu.len(), sigma2.len());
    debug_assert_eq!(mu.len(), noise.len());
    mu.iter()
        .zip(sigma2)
        .zip(noise)
        .map(|((&m, &s2), &n)| m + s2.sqrt() * n)
        .collect()
}

/// Closed-form `KL(N(mu, diag(sigma^2)) || N(0, I))`.
pub fn kl_divergence(mu: &[f64], sigma2: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(sigma2)
        .map(|(&m, &s2)| s2 + m * m - 1.0 - s2.ln())
        .sum::<f64>()
}

/// Loss components of one ELBO evaluation (means over the batch).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboParts {
    pub recon: f64,
    pub kl: f64,
    /// Mean soft-triplet term; zero when no metric loss is in play.
    pub metric: f64,
    /// Minimized total: `recon + beta * kl + metric`.
    pub loss: f64,
}

/// Single-sample ELBO estimate over a batch, one reparameterized draw per
/// datum from `rng`.
pub fn elbo(
    model: &VaeModel,
    batch: &[Vec<f64>],
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<ElboParts, VaeError> {
    let (parts, _) = elbo_with_grads(model, batch, beta, rng)?;
    Ok(parts)
}

/// ELBO and its gradient with respect to [`VaeModel::params`].
pub fn elbo_with_grads(
    model: &VaeModel,
    batch: &[Vec<f64>],
    beta: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(ElboParts, Vec<f64>), VaeError> {
    batch_step(model, batch, beta, None, rng)
}

/// Shared ELBO/DML batch objective. The metric argument carries the DML
/// configuration plus normalized function values aligned with `batch`.
pub(crate) fn batch_step(
    model: &VaeModel,
    batch: &[Vec<f64>],
    beta: f64,
    metric: Option<(&DmlConfig, &[f64])>,
    rng: &mut ChaCha8Rng,
) -> Result<(ElboParts, Vec<f64>), VaeError> {
    if batch.is_empty() {
        return Err(VaeError::EmptyData);
    }
    let n = batch.len();
    let d = model.latent_dim;
    let inv_n = 1.0 / n as f64;

    struct PerItem {
        tape_e: crate::nn::Tape,
        mu: Vec<f64>,
        logv: Vec<f64>,
        sigma: Vec<f64>,
        /// Accumulated gradient w.r.t. the encoder output (2d), fully scaled.
        enc_grad: Vec<f64>,
    }

    let mut items = Vec::with_capacity(n);
    let mut enc_grads = MlpGrads::zeros_like(&model.encoder);
    let mut dec_grads = MlpGrads::zeros_like(&model.decoder);
    let mut recon_sum = 0.0;
    let mut kl_sum = 0.0;

    for x in batch {
        if x.len() != model.ambient_dim {
            return Err(VaeError::ShapeMismatch {
                expected: model.ambient_dim,
                got: x.len(),
            });
        }
        let (out, tape_e) = model.encoder.forward(x)?;
        let (mu, logv) = out.split_at(d);
        let sigma: Vec<f64> = logv.iter().map(|&v| (0.5 * v).exp()).collect();
        let xi: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let z: Vec<f64> = mu
            .iter()
            .zip(&sigma)
            .zip(&xi)
            .map(|((&m, &s), &e)| m + s * e)
            .collect();

        let (xhat, tape_d) = model.decoder.forward(&z)?;
        recon_sum += 0.5
            * x.iter()
                .zip(&xhat)
                .map(|(&a, &b)| (a - b) * (a - b))
                .sum::<f64>();
        let sigma2: Vec<f64> = logv.iter().map(|&v| v.exp()).collect();
        kl_sum += kl_divergence(mu, &sigma2);

        // Reconstruction path: d recon / d xhat = (xhat - x), scaled by 1/n.
        let grad_xhat: Vec<f64> = xhat
            .iter()
            .zip(x)
            .map(|(&a, &b)| inv_n * (a - b))
            .collect();
        let gz = model.decoder.backward(&tape_d, &grad_xhat, &mut dec_grads)?;

        // Encoder-output gradient: mean head then log-variance head.
        let mut enc_grad = vec![0.0; 2 * d];
        for l in 0..d {
            enc_grad[l] = gz[l] + inv_n * beta * mu[l];
            enc_grad[d + l] =
                gz[l] * 0.5 * (z[l] - mu[l]) + inv_n * beta * 0.5 * (sigma2[l] - 1.0);
        }
        items.push(PerItem {
            tape_e,
            mu: mu.to_vec(),
            logv: logv.to_vec(),
            sigma,
            enc_grad,
        });
    }

    // Soft-triplet metric term over sampled admissible triplets.
    let mut metric_mean = 0.0;
    if let Some((cfg, f_norm)) = metric {
        debug_assert_eq!(f_norm.len(), n);
        let draws = dml::sample_triplets(f_norm, cfg, rng);
        if !draws.is_empty() {
            let inv_t = 1.0 / draws.len() as f64;
            let mut metric_sum = 0.0;
            for draw in &draws {
                let mut member_z = Vec::with_capacity(3);
                for &idx in &[draw.base, draw.pos, draw.neg] {
                    let it = &items[idx];
                    let xi: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                    let z: Vec<f64> = it
                        .mu
                        .iter()
                        .zip(&it.sigma)
                        .zip(&xi)
                        .map(|((&m, &s), &e)| m + s * e)
                        .collect();
                    member_z.push(z);
                }
                let (loss_t, gzs) = dml::soft_triplet_with_zgrads(
                    &member_z[0],
                    &member_z[1],
                    &member_z[2],
                    f_norm[draw.base],
                    f_norm[draw.pos],
                    f_norm[draw.neg],
                    cfg,
                );
                metric_sum += loss_t;
                for (slot, &idx) in [draw.base, draw.pos, draw.neg].iter().enumerate() {
                    let it = &mut items[idx];
                    for l in 0..d {
                        let g = inv_t * gzs[slot][l];
                        it.enc_grad[l] += g;
                        it.enc_grad[d + l] += g * 0.5 * (member_z[slot][l] - it.mu[l]);
                    }
                }
                let _ = &items;
            }
            metric_mean = metric_sum * inv_t;
        }
    }

    for it in &items {
        model.encoder.backward(&it.tape_e, &it.enc_grad, &mut enc_grads)?;
        let _ = &it.logv;
    }

    let recon = recon_sum * inv_n;
    let kl = kl_sum * inv_n;
    let parts = ElboParts {
        recon,
        kl,
        metric: metric_mean,
        loss: recon + beta * kl + metric_mean,
    };
    let mut flat = enc_grads.flatten();
    flat.extend(dec_grads.flatten());
    Ok((parts, flat))
}

/// Per-epoch mean losses recorded during training.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub epoch_loss: Vec<f64>,
}

/// Shuffled mini-batch Adam on the ELBO with the configured beta schedule.
pub fn train(
    model: &mut VaeModel,
    data: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<TrainHistory, VaeError> {
    run_training(model, data, None, cfg, None)
}

/// Warm-start continuation on the x-components of a labelled set (plain ELBO,
/// beta fixed at 1 unless a schedule is given).
pub fn retrain(
    model: &mut VaeModel,
    labelled: &[(Vec<f64>, f64)],
    cfg: &TrainConfig,
) -> Result<TrainHistory, VaeError> {
    if labelled.is_empty() {
        return Err(VaeError::EmptyData);
    }
    let xs: Vec<Vec<f64>> = labelled.iter().map(|(x, _)| x.clone()).collect();
    run_training(model, &xs, None, cfg, None)
}

pub(crate) fn run_training(
    model: &mut VaeModel,
    data: &[Vec<f64>],
    f_norm: Option<&[f64]>,
    cfg: &TrainConfig,
    dml_cfg: Option<&DmlConfig>,
) -> Result<TrainHistory, VaeError> {
    if data.is_empty() {
        return Err(VaeError::EmptyData);
    }
    let batch_size = cfg.batch.max(1).min(data.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    use rand::SeedableRng;
    let mut adam = AdamState::new(model.params().len(), cfg.lr);
    let mut history = TrainHistory::default();

    for epoch in 0..cfg.epochs {
        let beta = cfg.beta_at(epoch);
        let mut order: Vec<usize> = (0..data.len()).collect();
        shuffle(&mut order, &mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<Vec<f64>> = chunk.iter().map(|&i| data[i].clone()).collect();
            let metric = match (dml_cfg, f_norm) {
                (Some(cfg_dml), Some(fs)) => {
                    let batch_f: Vec<f64> = chunk.iter().map(|&i| fs[i]).collect();
                    Some((cfg_dml, batch_f))
                }
                _ => None,
            };
            let (parts, grads) = match &metric {
                Some((cfg_dml, batch_f)) => {
                    batch_step(model, &batch, beta, Some((cfg_dml, batch_f)), &mut rng)?
                }
                None => batch_step(model, &batch, beta, None, &mut rng)?,
            };
            let mut params = model.params();
            adam.step(&mut params, &grads)?;
            model.set_params(&params)?;
            epoch_loss += parts.loss;
            batches += 1;
        }
        history.epoch_loss.push(epoch_loss / batches as f64);
    }
    Ok(history)
}

fn shuffle(order: &mut [usize], rng: &mut ChaCha8Rng) {
    for i in (1..order.len()).rev() {
        let j = rng.random_range(0..=i);
        order.swap(i, j);
    }
}

/// Correlated unlabelled pool: draws from `N(center, Sigma)` with
/// `Sigma = s^2 [(1 - rho) I + rho 1 1^T]`, `rho = 0.9` and `s` a quarter of
/// the mean side length, clipped to the domain.
pub fn generate_training_data(
    dim: usize,
    count: usize,
    domain: &BoxDomain,
    seed: u64,
) -> Vec<Vec<f64>> {
    assert_eq!(domain.dim(), dim);
    const RHO: f64 = 0.9;
    let s = 0.25 * domain.sides().iter().sum::<f64>() / dim as f64;
    let center = domain.center();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::SeedableRng;
    let a = (1.0 - RHO).sqrt();
    let b = RHO.sqrt();
    (0..count)
        .map(|_| {
            let shared: f64 = StandardNormal.sample(&mut rng);
            let x: Vec<f64> = (0..dim)
                .map(|i| {
                    let own: f64 = StandardNormal.sample(&mut rng);
                    center[i] + s * (a * own + b * shared)
                })
                .collect();
            domain.clip(&x)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    fn tiny_model(seed: u64) -> VaeModel {
        VaeModel::new(&[4, 3, 2], &[2, 3, 4], seed).unwrap()
    }

    #[test]
    fn architecture_validation() {
        assert!(VaeModel::new(&[4, 2], &[2, 4], 0).is_ok());
        assert!(VaeModel::new(&[4, 2], &[3, 4], 0).is_err());
        assert!(VaeModel::new(&[4, 4], &[4, 4], 0).is_err()); // d must be < D
    }

    #[test]
    fn zero_initialized_heads_give_standard_posterior() {
        let mut model = tiny_model(1);
        let zeros = vec![0.0; model.params().len()];
        model.set_params(&zeros).unwrap();
        let (mu, sigma2) = model.encode(&[0.5, -0.5, 1.0, 0.0]).unwrap();
        assert_eq!(mu, vec![0.0, 0.0]);
        assert_eq!(sigma2, vec![1.0, 1.0]);
        assert_eq!(model.decode(&[0.3, -0.3]).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn encode_decode_are_deterministic_and_match_manual_forward() {
        let model = tiny_model(3);
        let x = [0.1, 0.4, -0.2, 0.9];
        let (mu1, s1) = model.encode(&x).unwrap();
        let (mu2, s2) = model.encode(&x).unwrap();
        assert_eq!(mu1, mu2);
        assert_eq!(s1, s2);
        let (raw, _) = model.encoder().forward(&x).unwrap();
        assert_eq!(&mu1[..], &raw[..2]);
        for (s, &r) in s1.iter().zip(&raw[2..]) {
            assert_abs_diff_eq!(*s, r.exp(), epsilon = 1e-15);
        }
        let z = [0.2, -0.7];
        assert_eq!(model.decode(&z).unwrap(), model.decoder().forward(&z).unwrap().0);
    }

    #[test]
    fn reparameterize_edge_cases_and_moments() {
        assert_eq!(reparameterize(&[1.0, -2.0], &[4.0, 9.0], &[0.0, 0.0]), vec![1.0, -2.0]);
        assert_eq!(reparameterize(&[0.0], &[1.0], &[1.7]), vec![1.7]);

        let mu = [0.7];
        let sigma2 = [2.3];
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for _ in 0..n {
            let xi: f64 = StandardNormal.sample(&mut rng);
            let z = reparameterize(&mu, &sigma2, &[xi])[0];
            sum += z;
            sum_sq += z * z;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let se_mean = sigma2[0].sqrt() / (n as f64).sqrt();
        // Var of the sample variance of a normal: 2 sigma^4 / n.
        let se_var = (2.0 * sigma2[0] * sigma2[0] / n as f64).sqrt();
        assert!((mean - mu[0]).abs() < 4.0 * se_mean);
        assert!((var - sigma2[0]).abs() < 4.0 * se_var);
    }

    #[test]
    fn kl_closed_form_known_values() {
        assert_eq!(kl_divergence(&[0.0, 0.0], &[1.0, 1.0]), 0.0);
        assert_abs_diff_eq!(kl_divergence(&[1.0], &[1.0]), 0.5, epsilon = 1e-15);
    }

    /// Simpson-rule quadrature of `KL(N(mu, s2) || N(0,1))`.
    fn kl_quadrature(mu: f64, s2: f64) -> f64 {
        let s = s2.sqrt();
        let lo = mu - 14.0 * s.max(1.0);
        let hi = mu + 14.0 * s.max(1.0);
        let n = 40_001; // odd node count
        let h = (hi - lo) / (n - 1) as f64;
        let integrand = |x: f64| {
            let p = (-0.5 * (x - mu) * (x - mu) / s2).exp() / (s * (2.0 * std::f64::consts::PI).sqrt());
            if p <= 0.0 {
                return 0.0;
            }
            let log_q = -0.5 * x * x - 0.5 * (2.0 * std::f64::consts::PI).ln();
            let log_p = -0.5 * (x - mu) * (x - mu) / s2
                - 0.5 * (2.0 * std::f64::consts::PI * s2).ln();
            p * (log_p - log_q)
        };
        let mut acc = integrand(lo) + integrand(hi);
        for i in 1..n - 1 {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * integrand(lo + i as f64 * h);
        }
        acc * h / 3.0
    }

    #[test]
    fn kl_matches_quadrature_on_random_gaussians() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..10 {
            let mu = rng.random_range(-2.0..2.0);
            let s2 = rng.random_range(0.2..3.0);
            let closed = kl_divergence(&[mu], &[s2]);
            let quad = kl_quadrature(mu, s2);
            assert_abs_diff_eq!(closed, quad, epsilon = 1e-6);
        }
    }

    #[test]
    fn kl_is_nonnegative_for_encoder_outputs() {
        let model = tiny_model(9);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..200 {
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-3.0..3.0)).collect();
            let (mu, s2) = model.encode(&x).unwrap();
            assert!(kl_divergence(&mu, &s2) >= -1e-12);
        }
    }

    #[test]
    fn elbo_parts_for_standard_posterior() {
        let mut model = tiny_model(2);
        let zeros = vec![0.0; model.params().len()];
        model.set_params(&zeros).unwrap();
        // mu = 0, sigma^2 = 1 -> kl = 0; x = 0 decodes to 0 -> recon = 0.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let parts = elbo(&model, &[vec![0.0; 4]], 1.0, &mut rng).unwrap();
        assert_eq!(parts.kl, 0.0);
        assert_eq!(parts.recon, 0.0);
        assert_eq!(parts.loss, 0.0);
    }

    #[test]
    fn elbo_gradients_match_finite_differences() {
        let model = tiny_model(21);
        let batch = vec![
            vec![0.4, -0.2, 0.9, 0.1],
            vec![-0.6, 0.3, 0.2, -0.8],
            vec![0.0, 0.7, -0.5, 0.5],
        ];
        let beta = 0.7;
        let noise_seed = 99;
        let (_, grads) = elbo_with_grads(
            &model,
            &batch,
            beta,
            &mut ChaCha8Rng::seed_from_u64(noise_seed),
        )
        .unwrap();

        let h = 1e-5;
        let base = model.params();
        let mut probe = model.clone();
        let mut max_rel: f64 = 0.0;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            probe.set_params(&p).unwrap();
            let fp = elbo(&probe, &batch, beta, &mut ChaCha8Rng::seed_from_u64(noise_seed))
                .unwrap()
                .loss;
            p[i] -= 2.0 * h;
            probe.set_params(&p).unwrap();
            let fm = elbo(&probe, &batch, beta, &mut ChaCha8Rng::seed_from_u64(noise_seed))
                .unwrap()
                .loss;
            let fd = (fp - fm) / (2.0 * h);
            let denom = fd.abs().max(grads[i].abs()).max(1e-4);
            max_rel = max_rel.max((fd - grads[i]).abs() / denom);
        }
        assert!(max_rel < 1e-3, "max relative gradient error {max_rel}");
    }

    #[test]
    fn train_with_zero_lr_is_identity() {
        let mut model = tiny_model(6);
        let before = model.params();
        let data: Vec<Vec<f64>> = (0..16).map(|i| vec![i as f64 * 0.1; 4]).collect();
        let cfg = TrainConfig {
            epochs: 3,
            batch: 4,
            lr: 0.0,
            seed: 1,
            schedule: Some(BetaSchedule::default()),
        };
        train(&mut model, &data, &cfg).unwrap();
        assert_eq!(model.params(), before);
    }

    #[test]
    fn beta_schedule_matches_reference_setting() {
        let s = BetaSchedule::default(); // (0, 1, 10, 0.1)
        assert_abs_diff_eq!(s.beta_at(0), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(s.beta_at(95), 0.9, epsilon = 1e-12);
        assert_abs_diff_eq!(s.beta_at(100), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.beta_at(400), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn training_loss_mostly_decreases_on_correlated_data() {
        // The per-epoch loss is a single-sample ELBO estimate, so the bar is
        // cleared only while per-epoch progress dominates estimator noise:
        // measure the fast-descent phase.
        let domain = BoxDomain::symmetric(6, 3.0);
        let data = generate_training_data(6, 400, &domain, 12);
        let mut model = VaeModel::new(&[6, 4, 2], &[2, 4, 6], 5).unwrap();
        let cfg = TrainConfig {
            epochs: 15,
            batch: 50,
            lr: 5e-3,
            seed: 3,
            schedule: Some(BetaSchedule::default()),
        };
        let hist = train(&mut model, &data, &cfg).unwrap();
        let pairs = hist.epoch_loss.windows(2).count();
        let improving = hist
            .epoch_loss
            .windows(2)
            .filter(|w| w[1] <= w[0] + 1e-12)
            .count();
        assert!(
            improving as f64 >= 0.8 * pairs as f64,
            "only {improving}/{pairs} epoch transitions improved: {:?}",
            hist.epoch_loss
        );
    }

    #[test]
    fn retrain_zero_epochs_is_bitwise_noop_and_nonzero_moves() {
        let mut model = tiny_model(30);
        let labelled: Vec<(Vec<f64>, f64)> = (0..10)
            .map(|i| (vec![0.1 * i as f64; 4], i as f64))
            .collect();
        let before = model.params();
        let mut cfg = TrainConfig::retrain_default(4, 2);
        cfg.epochs = 0;
        retrain(&mut model, &labelled, &cfg).unwrap();
        assert_eq!(model.params(), before);

        let cfg = TrainConfig::retrain_default(4, 2);
        assert_eq!(cfg.epochs, 2);
        assert!(cfg.schedule.is_none());
        retrain(&mut model, &labelled, &cfg).unwrap();
        let moved: f64 = model
            .params()
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        assert!(moved > 0.0);
    }

    #[test]
    fn generated_pool_is_correlated_and_inside_domain() {
        // Wide domain so clipping never triggers: the raw correlation is 0.9.
        let dim = 4;
        let domain = BoxDomain::symmetric(dim, 1000.0);
        let data = generate_training_data(dim, 50_000, &domain, 8);
        let col = |j: usize| data.iter().map(move |r| r[j]);
        let mean: Vec<f64> = (0..dim)
            .map(|j| col(j).sum::<f64>() / data.len() as f64)
            .collect();
        let cov = |a: usize, b: usize| {
            data.iter()
                .map(|r| (r[a] - mean[a]) * (r[b] - mean[b]))
                .sum::<f64>()
                / data.len() as f64
        };
        let corr = cov(0, 1) / (cov(0, 0) * cov(1, 1)).sqrt();
        assert!(
            (corr - 0.9).abs() < 0.05,
            "pairwise correlation {corr} should be near 0.9"
        );

        let tight = BoxDomain::symmetric(dim, 1.0);
        for row in generate_training_data(dim, 500, &tight, 9) {
            assert!(tight.contains(&row));
        }
    }

    #[test]
    fn checkpoint_round_trip_preserves_behavior_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let model = tiny_model(44);
        let path = dir.path().join("model");
        model.save_checkpoint(&path, 44).unwrap();
        let (loaded, meta) = VaeModel::load_checkpoint(&path).unwrap();
        assert_eq!(meta.ambient_dim, 4);
        assert_eq!(meta.latent_dim, 2);
        assert_eq!(meta.activation, "softplus");
        let x = [0.3, -0.9, 0.5, 0.2];
        assert_eq!(model.encode(&x).unwrap(), loaded.encode(&x).unwrap());
        let z = [0.1, 0.6];
        assert_eq!(model.decode(&z).unwrap(), loaded.decode(&z).unwrap());
    }

    use rand::Rng;
}
