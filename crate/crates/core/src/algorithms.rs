//! The five optimizers: BO with sequential domain reduction in the ambient
//! space, vanilla latent-space BO (optionally with SDR), retraining
//! latent-space BO with SDR, retraining latent-space BO with the deep metric
//! loss (no SDR), and the random-embedding baseline.
//!
//! One run is strictly sequential; repetitions with different seeds are
//! independent and may execute in parallel. Identical configurations
//! (including seeds) produce bit-identical traces.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::acquisition::{maximize_acquisition, AcqConfig};
use crate::dml::{retrain_dml, DmlConfig};
use crate::domain::BoxDomain;
use crate::gp::{GpError, GpFitConfig, GpPosterior};
use crate::sdr::{SdrParams, SdrState};
use crate::seeds::{tags, SeedStream};
use crate::testbed::{NoisyObjective, ObjectiveSpec, TestbedError};
use crate::vae::{self, TrainConfig, VaeError, VaeModel};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Gp(#[from] GpError),
    #[error(transparent)]
    Vae(#[from] VaeError),
    #[error(transparent)]
    Testbed(#[from] TestbedError),
    #[error("invalid run configuration: {0}")]
    Config(String),
}

/// Algorithm identifiers as used in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    /// `bo_sdr`: GP + EI in the ambient space with scheduled SDR.
    BoSdr,
    /// `v_bovae`: vanilla latent-space BO with SDR in the latent box.
    VBovae,
    /// `r_bovae`: latent-space BO with periodic ELBO retraining and SDR.
    RBovae,
    /// `s_bovae`: latent-space BO with periodic DML retraining, no SDR.
    SBovae,
    /// `rembo`: BO over a random linear embedding.
    Rembo,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::BoSdr => "bo_sdr",
            Algorithm::VBovae => "v_bovae",
            Algorithm::RBovae => "r_bovae",
            Algorithm::SBovae => "s_bovae",
            Algorithm::Rembo => "rembo",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, RunError> {
        Ok(match name {
            "bo_sdr" => Algorithm::BoSdr,
            "v_bovae" => Algorithm::VBovae,
            "r_bovae" => Algorithm::RBovae,
            "s_bovae" => Algorithm::SBovae,
            "rembo" => Algorithm::Rembo,
            other => return Err(RunError::Config(format!("unknown algorithm `{other}`"))),
        })
    }

    pub fn uses_vae(&self) -> bool {
        matches!(self, Algorithm::VBovae | Algorithm::RBovae | Algorithm::SBovae)
    }
}

/// VAE architecture and training setup for the latent-space algorithms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VaeRunConfig {
    pub encoder_widths: Vec<usize>,
    pub decoder_widths: Vec<usize>,
    /// Unlabelled pool size M.
    pub pool_size: usize,
    pub pretrain: TrainConfig,
    pub retrain: TrainConfig,
}

impl VaeRunConfig {
    pub fn latent_dim(&self) -> usize {
        *self.encoder_widths.last().unwrap_or(&0)
    }
}

/// Complete configuration of a single optimizer run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub algorithm: Algorithm,
    /// Evaluation budget B for the optimization loop (excluding the initial
    /// design).
    pub budget: usize,
    /// Retraining period q.
    pub retrain_period: usize,
    /// Initial labelled count N. `None` selects `2 * search_dim` for the
    /// ambient algorithms and `max(2, ceil(0.01 M))` for the VAE ones.
    pub initial_count: Option<usize>,
    /// Half-width of the latent box, giving `[-w, w]^d`.
    pub latent_half_width: f64,
    pub sdr: SdrParams,
    pub sdr_enabled: bool,
    pub dml: DmlConfig,
    pub gp: GpFitConfig,
    pub acq: AcqConfig,
    /// Standard deviation of additive evaluation noise (0 = noiseless).
    pub noise_sigma: f64,
    /// Sample the decoder output instead of using its mean.
    pub stochastic_decode: bool,
    /// Effective dimension hint for `rembo`.
    pub effective_dim: Option<usize>,
    pub vae: Option<VaeRunConfig>,
    /// Per-repetition seed.
    pub seed: u64,
    /// Seed shared across repetitions: pool generation, weight init, and
    /// pre-training, so repeated runs reuse one pre-trained model.
    pub vae_seed: u64,
}

impl RunConfig {
    pub fn new(algorithm: Algorithm, budget: usize, seed: u64) -> Self {
        Self {
            algorithm,
            budget,
            retrain_period: 50,
            initial_count: None,
            latent_half_width: 5.0,
            sdr: SdrParams::default(),
            sdr_enabled: true,
            dml: DmlConfig::default(),
            gp: GpFitConfig::default(),
            acq: AcqConfig::default(),
            noise_sigma: 0.0,
            stochastic_decode: false,
            effective_dim: None,
            vae: None,
            seed,
            vae_seed: seed,
        }
    }

    fn validate(&self) -> Result<(), RunError> {
        if self.retrain_period == 0 {
            return Err(RunError::Config("retrain period q must be >= 1".into()));
        }
        self.sdr.validate().map_err(RunError::Config)?;
        Ok(())
    }
}

/// One function evaluation and the bookkeeping around it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IterationRecord {
    /// 0 for initial-design rows, then 1..=B for loop iterations.
    pub iteration: usize,
    /// Cumulative evaluation count including the initial design.
    pub eval_count: usize,
    /// Ambient point actually evaluated.
    pub x: Vec<f64>,
    /// Latent (or embedded) query, when the search ran in a reduced space.
    pub z: Option<Vec<f64>>,
    pub f_observed: f64,
    /// Incumbent best observed value after this evaluation.
    pub f_best: f64,
    /// `f_best - f_star`.
    pub gap: f64,
    /// Snapshot of the search region the query was selected in.
    pub region_lo: Vec<f64>,
    pub region_hi: Vec<f64>,
    /// Wall-clock seconds spent on this iteration (never part of the CSV
    /// schema; reruns must stay byte-identical).
    pub wall_secs: f64,
}

/// Full per-run record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunTrace {
    pub algorithm: Algorithm,
    pub objective: String,
    pub dim: usize,
    /// Dimension of the space the acquisition searched in.
    pub search_dim: usize,
    pub f_star: f64,
    pub initial_count: usize,
    pub budget: usize,
    pub seed: u64,
    pub records: Vec<IterationRecord>,
}

impl RunTrace {
    pub fn best_f(&self) -> f64 {
        self.records.last().map(|r| r.f_best).unwrap_or(f64::INFINITY)
    }

    pub fn final_gap(&self) -> f64 {
        self.best_f() - self.f_star
    }

    /// Best value over the initial design only (`f*_0` in profile terms).
    pub fn initial_best(&self) -> f64 {
        self.records
            .iter()
            .filter(|r| r.iteration == 0)
            .map(|r| r.f_best)
            .last()
            .unwrap_or(f64::INFINITY)
    }

    /// Best-so-far after each post-initial evaluation, in order.
    pub fn loop_best_history(&self) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.iteration > 0)
            .map(|r| r.f_best)
            .collect()
    }
}

/// Uniform initial design inside the objective's domain (noise-free).
pub fn initial_design(
    spec: &ObjectiveSpec,
    n: usize,
    seed: u64,
) -> Result<Vec<(Vec<f64>, f64)>, TestbedError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    use rand::SeedableRng;
    (0..n)
        .map(|_| {
            let x = spec.domain().sample_uniform(&mut rng);
            let f = spec.evaluate(&x)?;
            Ok((x, f))
        })
        .collect()
}

/// The initial labelled count for the VAE algorithms: 1% of the pool,
/// at least 2.
pub fn one_percent_count(pool_size: usize) -> usize {
    ((pool_size as f64 * 0.01).ceil() as usize).max(2)
}

/// Noise-wrapped, budget-counted objective used inside the optimizer loops.
struct Evaluator {
    noisy: NoisyObjective,
    count: usize,
}

impl Evaluator {
    fn new(spec: ObjectiveSpec, sigma: f64, seed: u64) -> Self {
        Self {
            noisy: NoisyObjective::new(spec, sigma, seed),
            count: 0,
        }
    }

    fn spec(&self) -> &ObjectiveSpec {
        self.noisy.base()
    }

    fn eval(&mut self, x: &[f64]) -> Result<f64, TestbedError> {
        self.count += 1;
        self.noisy.evaluate_noisy(x)
    }
}

/// Trace construction helper shared by all loops.
struct TraceBuilder {
    trace: RunTrace,
    f_best: f64,
}

impl TraceBuilder {
    fn new(
        algorithm: Algorithm,
        spec: &ObjectiveSpec,
        search_dim: usize,
        initial_count: usize,
        budget: usize,
        seed: u64,
    ) -> Self {
        Self {
            trace: RunTrace {
                algorithm,
                objective: spec.name().to_string(),
                dim: spec.dim(),
                search_dim,
                f_star: spec.f_star(),
                initial_count,
                budget,
                seed,
                records: Vec::with_capacity(initial_count + budget),
            },
            f_best: f64::INFINITY,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn push(
        &mut self,
        iteration: usize,
        eval_count: usize,
        x: Vec<f64>,
        z: Option<Vec<f64>>,
        f: f64,
        region: &BoxDomain,
        wall_secs: f64,
    ) {
        if f < self.f_best {
            self.f_best = f;
        }
        self.trace.records.push(IterationRecord {
            iteration,
            eval_count,
            x,
            z,
            f_observed: f,
            f_best: self.f_best,
            gap: self.f_best - self.trace.f_star,
            region_lo: region.lo().to_vec(),
            region_hi: region.hi().to_vec(),
            wall_secs,
        });
    }
}

fn fit_gp(
    xs: &[Vec<f64>],
    ys: &[f64],
    cfg: &GpFitConfig,
    seed: u64,
) -> Result<GpPosterior, GpError> {
    let mut fit_cfg = cfg.clone();
    fit_cfg.seed = seed;
    GpPosterior::fit(xs, ys, &fit_cfg)
}

fn acq_cfg_for(cfg: &AcqConfig, seed: u64) -> AcqConfig {
    let mut c = cfg.clone();
    c.seed = seed;
    c
}

/// Index of the smallest value (first on ties).
fn argmin(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v < values[best] {
            best = i;
        }
    }
    best
}

/// BO with scheduled sequential domain reduction in the ambient space.
/// With `cfg.sdr_enabled = false` this is plain BO over the full bounds.
pub fn bo_sdr(
    objective: &ObjectiveSpec,
    bounds: &BoxDomain,
    cfg: &RunConfig,
) -> Result<RunTrace, RunError> {
    cfg.validate()?;
    if bounds.dim() != objective.dim() {
        return Err(RunError::Config("bounds dimension mismatch".into()));
    }
    let ss = SeedStream::new(cfg.seed);
    let mut ev = Evaluator::new(objective.clone(), cfg.noise_sigma, ss.derive(tags::NOISE));
    let n_init = cfg.initial_count.unwrap_or(2 * bounds.dim()).max(2);
    let mut tb = TraceBuilder::new(
        cfg.algorithm,
        objective,
        bounds.dim(),
        n_init,
        cfg.budget,
        cfg.seed,
    );

    let mut design_rng = ss.rng(tags::INITIAL_DESIGN);
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(n_init + cfg.budget);
    let mut fs: Vec<f64> = Vec::with_capacity(n_init + cfg.budget);
    for i in 0..n_init {
        let t0 = Instant::now();
        let x = bounds.sample_uniform(&mut design_rng);
        let f = ev.eval(&x)?;
        xs.push(x.clone());
        fs.push(f);
        tb.push(0, i + 1, x, None, f, bounds, t0.elapsed().as_secs_f64());
    }

    let mut x_best = xs[argmin(&fs)].clone();
    let mut sdr = SdrState::init(&x_best, bounds, cfg.sdr);
    let gp_seed = ss.derive(tags::GP_FIT);
    let acq_seed = ss.derive(tags::ACQUISITION);

    for k in 0..cfg.budget {
        let t0 = Instant::now();
        let region = if cfg.sdr_enabled {
            sdr.region().clone()
        } else {
            bounds.clone()
        };
        let gp = fit_gp(&xs, &fs, &cfg.gp, mix(gp_seed, k))?;
        let x_next = maximize_acquisition(&gp, &region, &acq_cfg_for(&cfg.acq, mix(acq_seed, k)));
        let f = ev.eval(&x_next)?;
        xs.push(x_next.clone());
        fs.push(f);
        x_best = xs[argmin(&fs)].clone();
        if cfg.sdr_enabled {
            sdr.k = k;
            if sdr.should_update() {
                sdr.update(&x_best);
            }
        }
        tb.push(
            k + 1,
            n_init + k + 1,
            x_next,
            None,
            f,
            &region,
            t0.elapsed().as_secs_f64(),
        );
    }
    debug_assert_eq!(ev.count, n_init + cfg.budget);
    Ok(tb.trace)
}

/// Latent dataset bookkeeping for the VAE loops.
struct LatentState {
    labelled: Vec<(Vec<f64>, f64)>,
    zs: Vec<Vec<f64>>,
}

impl LatentState {
    fn re_encode(&mut self, model: &VaeModel) -> Result<(), VaeError> {
        self.zs = self
            .labelled
            .iter()
            .map(|(x, _)| model.encode_mean(x))
            .collect::<Result<_, _>>()?;
        Ok(())
    }

    fn fs(&self) -> Vec<f64> {
        self.labelled.iter().map(|(_, f)| *f).collect()
    }

    fn best_z(&self) -> Vec<f64> {
        let fs = self.fs();
        self.zs[argmin(&fs)].clone()
    }
}

/// Shared setup for the three VAE-driven algorithms: pool regeneration,
/// 1%-subsampled initial design, and encoding.
fn latent_setup(
    objective: &ObjectiveSpec,
    model: &VaeModel,
    cfg: &RunConfig,
    ev: &mut Evaluator,
    tb: &mut TraceBuilder,
    r0: &BoxDomain,
) -> Result<LatentState, RunError> {
    let vae_cfg = cfg
        .vae
        .as_ref()
        .ok_or_else(|| RunError::Config("VAE algorithm needs a [vae] config".into()))?;
    if model.ambient_dim() != objective.dim() {
        return Err(RunError::Config(format!(
            "VAE ambient dimension {} does not match the objective dimension {}",
            model.ambient_dim(),
            objective.dim()
        )));
    }
    let vss = SeedStream::new(cfg.vae_seed);
    let pool = vae::generate_training_data(
        objective.dim(),
        vae_cfg.pool_size,
        objective.domain(),
        vss.derive(tags::VAE_POOL),
    );
    let n_init = cfg
        .initial_count
        .unwrap_or_else(|| one_percent_count(vae_cfg.pool_size))
        .max(2)
        .min(pool.len());

    let ss = SeedStream::new(cfg.seed);
    let mut rng = ss.rng(tags::INITIAL_DESIGN);
    let mut indices: Vec<usize> = (0..pool.len()).collect();
    for i in 0..n_init {
        let j = rng.random_range(i..indices.len());
        indices.swap(i, j);
    }

    let mut labelled = Vec::with_capacity(n_init + cfg.budget);
    for (row, &idx) in indices[..n_init].iter().enumerate() {
        let t0 = Instant::now();
        let x = pool[idx].clone();
        let f = ev.eval(&x)?;
        let z = model.encode_mean(&x)?;
        labelled.push((x.clone(), f));
        tb.push(
            0,
            row + 1,
            x,
            Some(z),
            f,
            r0,
            t0.elapsed().as_secs_f64(),
        );
    }
    let mut state = LatentState { labelled, zs: Vec::new() };
    state.re_encode(model)?;
    Ok(state)
}

/// Decode a latent query to an ambient candidate, optionally sampling the
/// unit-variance observation model, then clip into the domain.
fn decode_to_domain(
    model: &VaeModel,
    z: &[f64],
    domain: &BoxDomain,
    stochastic: bool,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, VaeError> {
    let mut x = model.decode(z)?;
    if stochastic {
        for v in &mut x {
            let e: f64 = StandardNormal.sample(rng);
            *v += e;
        }
    }
    Ok(domain.clip(&x))
}

/// Vanilla latent-space BO: encode once, then GP + EI in the latent box with
/// optional SDR contraction.
pub fn bo_vae(
    objective: &ObjectiveSpec,
    model: &VaeModel,
    cfg: &RunConfig,
) -> Result<RunTrace, RunError> {
    cfg.validate()?;
    let d = model.latent_dim();
    let r0 = BoxDomain::symmetric(d, cfg.latent_half_width);
    let ss = SeedStream::new(cfg.seed);
    let mut ev = Evaluator::new(objective.clone(), cfg.noise_sigma, ss.derive(tags::NOISE));
    let mut tb = TraceBuilder::new(cfg.algorithm, objective, d, 0, cfg.budget, cfg.seed);
    let mut state = latent_setup(objective, model, cfg, &mut ev, &mut tb, &r0)?;
    tb.trace.initial_count = state.labelled.len();

    let mut sdr = SdrState::init(&state.best_z(), &r0, cfg.sdr);
    let gp_seed = ss.derive(tags::GP_FIT);
    let acq_seed = ss.derive(tags::ACQUISITION);
    let mut decode_rng = ss.rng(tags::VAE_INIT);
    let n_init = state.labelled.len();

    for k in 0..cfg.budget {
        let t0 = Instant::now();
        let region = if cfg.sdr_enabled { sdr.region().clone() } else { r0.clone() };
        let fs = state.fs();
        let gp = fit_gp(&state.zs, &fs, &cfg.gp, mix(gp_seed, k))?;
        let z_next = maximize_acquisition(&gp, &region, &acq_cfg_for(&cfg.acq, mix(acq_seed, k)));
        let x_next = decode_to_domain(
            model,
            &z_next,
            objective.domain(),
            cfg.stochastic_decode,
            &mut decode_rng,
        )?;
        let f = ev.eval(&x_next)?;
        state.labelled.push((x_next.clone(), f));
        state.zs.push(z_next.clone());
        if cfg.sdr_enabled {
            sdr.k = k;
            if sdr.should_update() {
                sdr.update(&state.best_z());
            }
        }
        tb.push(
            k + 1,
            n_init + k + 1,
            x_next,
            Some(z_next),
            f,
            &region,
            t0.elapsed().as_secs_f64(),
        );
    }
    debug_assert_eq!(ev.count, n_init + cfg.budget);
    Ok(tb.trace)
}

/// Retraining latent-space BO. `use_dml` switches the retraining objective
/// to the DML-augmented ELBO and disables SDR, which is the published
/// pairing for the two retraining variants.
fn bo_vae_retraining_loop(
    objective: &ObjectiveSpec,
    pretrained: &VaeModel,
    cfg: &RunConfig,
    use_dml: bool,
) -> Result<RunTrace, RunError> {
    cfg.validate()?;
    let vae_cfg = cfg
        .vae
        .as_ref()
        .ok_or_else(|| RunError::Config("VAE algorithm needs a [vae] config".into()))?
        .clone();
    let d = pretrained.latent_dim();
    let r0 = BoxDomain::symmetric(d, cfg.latent_half_width);
    let ss = SeedStream::new(cfg.seed);
    let mut ev = Evaluator::new(objective.clone(), cfg.noise_sigma, ss.derive(tags::NOISE));
    let mut tb = TraceBuilder::new(cfg.algorithm, objective, d, 0, cfg.budget, cfg.seed);
    let mut model = pretrained.clone();
    let mut state = latent_setup(objective, &model, cfg, &mut ev, &mut tb, &r0)?;
    tb.trace.initial_count = state.labelled.len();
    let n_init = state.labelled.len();

    let gp_seed = ss.derive(tags::GP_FIT);
    let acq_seed = ss.derive(tags::ACQUISITION);
    let retrain_seed = ss.derive(tags::RETRAIN);
    let mut decode_rng = ss.rng(tags::VAE_INIT);

    let q = cfg.retrain_period.min(cfg.budget.max(1));
    let cycles = cfg.budget.div_ceil(q);
    let mut done = 0;
    for l in 1..=cycles {
        // Warm-start retraining on the full current labelled set.
        let mut retrain_cfg = vae_cfg.retrain.clone();
        retrain_cfg.seed = mix(retrain_seed, l);
        if use_dml {
            retrain_dml(&mut model, &state.labelled, &retrain_cfg, &cfg.dml)?;
        } else {
            vae::retrain(&mut model, &state.labelled, &retrain_cfg)?;
        }
        state.re_encode(&model)?;

        // SDR restarts from the full latent box each cycle; re-encoding
        // invalidates old latent coordinates.
        let mut sdr = SdrState::init(&state.best_z(), &r0, cfg.sdr);
        let inner = q.min(cfg.budget - done);
        for k in 0..inner {
            let t0 = Instant::now();
            let use_sdr = cfg.sdr_enabled && !use_dml;
            let region = if use_sdr { sdr.region().clone() } else { r0.clone() };
            let fs = state.fs();
            let gp = fit_gp(&state.zs, &fs, &cfg.gp, mix(gp_seed, done + k))?;
            let z_next =
                maximize_acquisition(&gp, &region, &acq_cfg_for(&cfg.acq, mix(acq_seed, done + k)));
            let x_next = decode_to_domain(
                &model,
                &z_next,
                objective.domain(),
                cfg.stochastic_decode,
                &mut decode_rng,
            )?;
            let f = ev.eval(&x_next)?;
            state.labelled.push((x_next.clone(), f));
            state.zs.push(z_next.clone());
            if use_sdr {
                sdr.k = k;
                if sdr.should_update() {
                    sdr.update(&state.best_z());
                }
            }
            tb.push(
                done + k + 1,
                n_init + done + k + 1,
                x_next,
                Some(z_next),
                f,
                &region,
                t0.elapsed().as_secs_f64(),
            );
        }
        done += inner;
    }
    debug_assert_eq!(done, cfg.budget);
    debug_assert_eq!(ev.count, n_init + cfg.budget);
    Ok(tb.trace)
}

/// Retraining latent-space BO with SDR (plain ELBO retraining).
pub fn bo_vae_retrain(
    objective: &ObjectiveSpec,
    pretrained: &VaeModel,
    cfg: &RunConfig,
) -> Result<RunTrace, RunError> {
    bo_vae_retraining_loop(objective, pretrained, cfg, false)
}

/// Retraining latent-space BO with the soft-triplet DML objective; the inner
/// loop searches the fixed latent box (no SDR).
pub fn bo_vae_dml(
    objective: &ObjectiveSpec,
    pretrained: &VaeModel,
    cfg: &RunConfig,
) -> Result<RunTrace, RunError> {
    bo_vae_retraining_loop(objective, pretrained, cfg, true)
}

/// BO over a random linear embedding: `d = d_e + 1`, box radius
/// `delta = 2.2 sqrt(d_e)`, Gaussian embedding fixed per run, queries mapped
/// by `x = clip(A y)`.
pub fn rembo(
    objective: &ObjectiveSpec,
    effective_dim: usize,
    cfg: &RunConfig,
) -> Result<RunTrace, RunError> {
    cfg.validate()?;
    if effective_dim == 0 {
        return Err(RunError::Config("effective dimension must be >= 1".into()));
    }
    let ambient = objective.dim();
    let d = effective_dim + 1;
    let delta = 2.2 * (effective_dim as f64).sqrt();
    let y_box = BoxDomain::symmetric(d, delta);

    let ss = SeedStream::new(cfg.seed);
    let mut ev = Evaluator::new(objective.clone(), cfg.noise_sigma, ss.derive(tags::NOISE));
    let mut emb_rng = ss.rng(tags::EMBEDDING);
    let a: DMatrix<f64> =
        DMatrix::from_fn(ambient, d, |_, _| StandardNormal.sample(&mut emb_rng));

    let lift = |y: &[f64]| -> Vec<f64> {
        let yv = nalgebra::DVector::from_column_slice(y);
        let x = &a * yv;
        objective.domain().clip(x.as_slice())
    };

    let n_init = cfg.initial_count.unwrap_or(2 * d).max(2);
    let mut tb = TraceBuilder::new(cfg.algorithm, objective, d, n_init, cfg.budget, cfg.seed);
    let mut design_rng = ss.rng(tags::INITIAL_DESIGN);
    let mut ys: Vec<Vec<f64>> = Vec::with_capacity(n_init + cfg.budget);
    let mut fs: Vec<f64> = Vec::with_capacity(n_init + cfg.budget);
    for i in 0..n_init {
        let t0 = Instant::now();
        let y = y_box.sample_uniform(&mut design_rng);
        let x = lift(&y);
        let f = ev.eval(&x)?;
        ys.push(y.clone());
        fs.push(f);
        tb.push(0, i + 1, x, Some(y), f, &y_box, t0.elapsed().as_secs_f64());
    }

    let gp_seed = ss.derive(tags::GP_FIT);
    let acq_seed = ss.derive(tags::ACQUISITION);
    for k in 0..cfg.budget {
        let t0 = Instant::now();
        let gp = fit_gp(&ys, &fs, &cfg.gp, mix(gp_seed, k))?;
        let y_next = maximize_acquisition(&gp, &y_box, &acq_cfg_for(&cfg.acq, mix(acq_seed, k)));
        let x_next = lift(&y_next);
        let f = ev.eval(&x_next)?;
        ys.push(y_next.clone());
        fs.push(f);
        tb.push(
            k + 1,
            n_init + k + 1,
            x_next,
            Some(y_next),
            f,
            &y_box,
            t0.elapsed().as_secs_f64(),
        );
    }
    debug_assert_eq!(ev.count, n_init + cfg.budget);
    Ok(tb.trace)
}

/// Pre-trains the model a run config describes: pool from the shared seed,
/// then ELBO training. The harness caches the result on disk.
pub fn pretrain_vae(objective: &ObjectiveSpec, cfg: &RunConfig) -> Result<VaeModel, RunError> {
    let vae_cfg = cfg
        .vae
        .as_ref()
        .ok_or_else(|| RunError::Config("no [vae] section in this run".into()))?;
    let vss = SeedStream::new(cfg.vae_seed);
    let pool = vae::generate_training_data(
        objective.dim(),
        vae_cfg.pool_size,
        objective.domain(),
        vss.derive(tags::VAE_POOL),
    );
    let mut model = VaeModel::new(
        &vae_cfg.encoder_widths,
        &vae_cfg.decoder_widths,
        vss.derive(tags::VAE_INIT),
    )?;
    let mut pre_cfg = vae_cfg.pretrain.clone();
    pre_cfg.seed = vss.derive(tags::VAE_TRAIN);
    vae::train(&mut model, &pool, &pre_cfg)?;
    Ok(model)
}

/// Runs the configured algorithm, pre-training the VAE when one is needed
/// and none is supplied.
pub fn run(
    objective: &ObjectiveSpec,
    cfg: &RunConfig,
    pretrained: Option<&VaeModel>,
) -> Result<RunTrace, RunError> {
    match cfg.algorithm {
        Algorithm::BoSdr => bo_sdr(objective, objective.domain(), cfg),
        Algorithm::Rembo => {
            let d_e = cfg.effective_dim.ok_or_else(|| {
                RunError::Config("rembo needs effective_dim".into())
            })?;
            rembo(objective, d_e, cfg)
        }
        Algorithm::VBovae | Algorithm::RBovae | Algorithm::SBovae => {
            let owned;
            let model = match pretrained {
                Some(m) => m,
                None => {
                    owned = pretrain_vae(objective, cfg)?;
                    &owned
                }
            };
            match cfg.algorithm {
                Algorithm::VBovae => bo_vae(objective, model, cfg),
                Algorithm::RBovae => bo_vae_retrain(objective, model, cfg),
                Algorithm::SBovae => bo_vae_dml(objective, model, cfg),
                _ => unreachable!(),
            }
        }
    }
}

fn mix(base: u64, k: usize) -> u64 {
    SeedStream::new(base).derive(k as u64 + 1)
}
