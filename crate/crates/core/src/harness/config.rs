//! Flat key-value experiment configs with one section per run.
//!
//! ```text
//! output_dir = results
//!
//! [run ackley10_bosdr]
//! algorithm = bo_sdr
//! function = ackley
//! dimension = 10
//! budget = 150
//! repetitions = 5
//! seed = 42
//! ```
//!
//! Keys are validated eagerly; unknown keys are configuration errors so
//! typos fail fast instead of silently running defaults.

use crate::acquisition::AcqConfig;
use crate::algorithms::{Algorithm, RunConfig, VaeRunConfig};
use crate::dml::DmlConfig;
use crate::domain::BoxDomain;
use crate::gp::GpFitConfig;
use crate::sdr::SdrParams;
use crate::testbed::{make_low_rank, scale_domain, ObjectiveSpec};
use crate::vae::{BetaSchedule, TrainConfig};

use super::HarnessError;

/// One `[run <id>]` section, resolved but not yet bound to a repetition seed.
#[derive(Debug, Clone)]
pub struct RunEntry {
    pub id: String,
    pub algorithm: Algorithm,
    pub function: String,
    pub dimension: usize,
    pub scale_to: Option<(f64, f64)>,
    pub low_rank_ambient: Option<usize>,
    pub low_rank_seed: u64,
    pub budget: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub initial_count: Option<usize>,
    pub noise_sigma: f64,
    pub sdr_enabled: bool,
    pub sdr: SdrParams,
    pub retrain_period: usize,
    pub latent_half_width: f64,
    pub effective_dim: Option<usize>,
    pub stochastic_decode: bool,
    pub dml: DmlConfig,
    pub gp: GpFitConfig,
    pub acq: AcqConfig,
    pub vae: Option<VaeSection>,
}

/// VAE keys of a run section.
#[derive(Debug, Clone)]
pub struct VaeSection {
    pub encoder: Vec<usize>,
    pub decoder: Vec<usize>,
    pub pool_size: usize,
    pub pretrain_epochs: usize,
    pub pretrain_batch: usize,
    pub pretrain_lr: f64,
    pub retrain_epochs: usize,
    pub retrain_batch: usize,
    pub retrain_lr: f64,
    pub beta_anneal: Option<BetaSchedule>,
}

impl VaeSection {
    pub fn to_run_config(&self) -> VaeRunConfig {
        VaeRunConfig {
            encoder_widths: self.encoder.clone(),
            decoder_widths: self.decoder.clone(),
            pool_size: self.pool_size,
            pretrain: TrainConfig {
                epochs: self.pretrain_epochs,
                batch: self.pretrain_batch,
                lr: self.pretrain_lr,
                seed: 0,
                schedule: self.beta_anneal,
            },
            retrain: TrainConfig {
                epochs: self.retrain_epochs,
                batch: self.retrain_batch,
                lr: self.retrain_lr,
                seed: 0,
                schedule: None,
            },
        }
    }
}

/// Parsed experiment file: global options plus run sections.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub output_dir: Option<String>,
    pub cache_dir: Option<String>,
    pub runs: Vec<RunEntry>,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let mut cfg = ExperimentConfig {
            output_dir: None,
            cache_dir: None,
            runs: Vec::new(),
        };
        let mut current: Option<RawSection> = None;
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = strip_comment(raw_line).trim().to_string();
            if line.is_empty() {
                continue;
            }
            if let Some(header) = line.strip_prefix('[') {
                let header = header
                    .strip_suffix(']')
                    .ok_or_else(|| config_err(lineno, "unterminated section header"))?
                    .trim();
                let id = header
                    .strip_prefix("run ")
                    .ok_or_else(|| config_err(lineno, "sections must be `[run <id>]`"))?
                    .trim()
                    .to_string();
                if id.is_empty()
                    || !id
                        .chars()
                        .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-')
                {
                    return Err(config_err(lineno, "run ids must be [A-Za-z0-9_-]+"));
                }
                if let Some(section) = current.take() {
                    cfg.runs.push(section.finish()?);
                }
                current = Some(RawSection::new(id));
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(lineno, "expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            match &mut current {
                None => match key {
                    "output_dir" => cfg.output_dir = Some(value.to_string()),
                    "cache_dir" => cfg.cache_dir = Some(value.to_string()),
                    other => {
                        return Err(config_err(
                            lineno,
                            &format!("unknown global key `{other}`"),
                        ))
                    }
                },
                Some(section) => section.set(key, value, lineno)?,
            }
        }
        if let Some(section) = current.take() {
            cfg.runs.push(section.finish()?);
        }
        let mut seen = std::collections::HashSet::new();
        for run in &cfg.runs {
            if !seen.insert(run.id.clone()) {
                return Err(HarnessError::Config(format!(
                    "duplicate run id `{}`",
                    run.id
                )));
            }
        }
        Ok(cfg)
    }
}

fn strip_comment(line: &str) -> &str {
    match line.find('#') {
        Some(idx) => &line[..idx],
        None => line,
    }
}

fn config_err(lineno: usize, msg: &str) -> HarnessError {
    HarnessError::Config(format!("line {}: {msg}", lineno + 1))
}

struct RawSection {
    id: String,
    entries: Vec<(String, String, usize)>,
}

impl RawSection {
    fn new(id: String) -> Self {
        Self {
            id,
            entries: Vec::new(),
        }
    }

    fn set(&mut self, key: &str, value: &str, lineno: usize) -> Result<(), HarnessError> {
        self.entries
            .push((key.to_string(), value.to_string(), lineno));
        Ok(())
    }

    fn finish(self) -> Result<RunEntry, HarnessError> {
        let mut entry = RunEntry {
            id: self.id.clone(),
            algorithm: Algorithm::BoSdr,
            function: String::new(),
            dimension: 0,
            scale_to: None,
            low_rank_ambient: None,
            low_rank_seed: 2024,
            budget: 0,
            repetitions: 1,
            seed: 0,
            initial_count: None,
            noise_sigma: 0.0,
            sdr_enabled: true,
            sdr: SdrParams::default(),
            retrain_period: 50,
            latent_half_width: 5.0,
            effective_dim: None,
            stochastic_decode: false,
            dml: DmlConfig::default(),
            gp: GpFitConfig::default(),
            acq: AcqConfig::default(),
            vae: None,
        };
        let mut vae = VaeSection {
            encoder: Vec::new(),
            decoder: Vec::new(),
            pool_size: 10_000,
            pretrain_epochs: 150,
            pretrain_batch: 256,
            pretrain_lr: 1e-3,
            retrain_epochs: 2,
            retrain_batch: 128,
            retrain_lr: 1e-3,
            beta_anneal: Some(BetaSchedule::default()),
        };
        let mut algorithm_seen = false;
        let mut function_seen = false;

        for (key, value, lineno) in &self.entries {
            let err = |msg: &str| config_err(*lineno, msg);
            let bad = |what: &str| config_err(*lineno, &format!("invalid {what}: `{value}`"));
            match key.as_str() {
                "algorithm" => {
                    entry.algorithm = Algorithm::from_name(value)
                        .map_err(|e| err(&e.to_string()))?;
                    algorithm_seen = true;
                }
                "function" => {
                    entry.function = value.to_string();
                    function_seen = true;
                }
                "dimension" => entry.dimension = parse(value).ok_or_else(|| bad("dimension"))?,
                "scale_to" => {
                    let (lo, hi) = value
                        .split_once(',')
                        .ok_or_else(|| bad("scale_to (want `lo,hi`)"))?;
                    entry.scale_to = Some((
                        parse(lo.trim()).ok_or_else(|| bad("scale_to low"))?,
                        parse(hi.trim()).ok_or_else(|| bad("scale_to high"))?,
                    ));
                }
                "low_rank_ambient" => {
                    entry.low_rank_ambient = Some(parse(value).ok_or_else(|| bad("ambient"))?)
                }
                "low_rank_seed" => {
                    entry.low_rank_seed = parse(value).ok_or_else(|| bad("low_rank_seed"))?
                }
                "budget" => entry.budget = parse(value).ok_or_else(|| bad("budget"))?,
                "repetitions" => {
                    entry.repetitions = parse(value).ok_or_else(|| bad("repetitions"))?
                }
                "seed" => entry.seed = parse(value).ok_or_else(|| bad("seed"))?,
                "initial_count" => {
                    entry.initial_count = Some(parse(value).ok_or_else(|| bad("initial_count"))?)
                }
                "noise_sigma" => {
                    entry.noise_sigma = parse(value).ok_or_else(|| bad("noise_sigma"))?
                }
                "sdr_enabled" => {
                    entry.sdr_enabled = parse_bool(value).ok_or_else(|| bad("sdr_enabled"))?
                }
                "gamma_o" => entry.sdr.gamma_o = parse(value).ok_or_else(|| bad("gamma_o"))?,
                "gamma_p" => entry.sdr.gamma_p = parse(value).ok_or_else(|| bad("gamma_p"))?,
                "eta" => entry.sdr.eta = parse(value).ok_or_else(|| bad("eta"))?,
                "t" => entry.sdr.t = parse(value).ok_or_else(|| bad("t"))?,
                "xi" => entry.sdr.xi = parse(value).ok_or_else(|| bad("xi"))?,
                "q" => entry.retrain_period = parse(value).ok_or_else(|| bad("q"))?,
                "latent_bound" => {
                    entry.latent_half_width = parse(value).ok_or_else(|| bad("latent_bound"))?
                }
                "effective_dim" => {
                    entry.effective_dim = Some(parse(value).ok_or_else(|| bad("effective_dim"))?)
                }
                "stochastic_decode" => {
                    entry.stochastic_decode =
                        parse_bool(value).ok_or_else(|| bad("stochastic_decode"))?
                }
                "dml_eta" => entry.dml.eta = parse(value).ok_or_else(|| bad("dml_eta"))?,
                "dml_nu" => entry.dml.nu = parse(value).ok_or_else(|| bad("dml_nu"))?,
                "dml_rho" => entry.dml.rho = parse(value).ok_or_else(|| bad("dml_rho"))?,
                "dml_p" => entry.dml.p = parse(value).ok_or_else(|| bad("dml_p"))?,
                "dml_triplets" => {
                    entry.dml.triplets_per_batch =
                        parse(value).ok_or_else(|| bad("dml_triplets"))?
                }
                "gp_restarts" => entry.gp.restarts = parse(value).ok_or_else(|| bad("gp_restarts"))?,
                "gp_max_iters" => {
                    entry.gp.max_iters = parse(value).ok_or_else(|| bad("gp_max_iters"))?
                }
                "acq_raw" => entry.acq.n_raw = parse(value).ok_or_else(|| bad("acq_raw"))?,
                "acq_refine" => entry.acq.n_refine = parse(value).ok_or_else(|| bad("acq_refine"))?,
                "acq_local_steps" => {
                    entry.acq.max_local_steps =
                        parse(value).ok_or_else(|| bad("acq_local_steps"))?
                }
                "encoder" => entry_widths(value).map(|w| vae.encoder = w).ok_or_else(|| bad("encoder"))?,
                "decoder" => entry_widths(value).map(|w| vae.decoder = w).ok_or_else(|| bad("decoder"))?,
                "pool_size" => vae.pool_size = parse(value).ok_or_else(|| bad("pool_size"))?,
                "pretrain_epochs" => {
                    vae.pretrain_epochs = parse(value).ok_or_else(|| bad("pretrain_epochs"))?
                }
                "pretrain_batch" => {
                    vae.pretrain_batch = parse(value).ok_or_else(|| bad("pretrain_batch"))?
                }
                "pretrain_lr" => vae.pretrain_lr = parse(value).ok_or_else(|| bad("pretrain_lr"))?,
                "retrain_epochs" => {
                    vae.retrain_epochs = parse(value).ok_or_else(|| bad("retrain_epochs"))?
                }
                "retrain_batch" => {
                    vae.retrain_batch = parse(value).ok_or_else(|| bad("retrain_batch"))?
                }
                "retrain_lr" => vae.retrain_lr = parse(value).ok_or_else(|| bad("retrain_lr"))?,
                "beta_anneal" => {
                    if value == "none" {
                        vae.beta_anneal = None;
                    } else {
                        let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                        if parts.len() != 4 {
                            return Err(bad("beta_anneal (want `bi,bf,bs,ba` or `none`)"));
                        }
                        vae.beta_anneal = Some(BetaSchedule {
                            beta_i: parse(parts[0]).ok_or_else(|| bad("beta_i"))?,
                            beta_f: parse(parts[1]).ok_or_else(|| bad("beta_f"))?,
                            beta_s: parse(parts[2]).ok_or_else(|| bad("beta_s"))?,
                            beta_a: parse(parts[3]).ok_or_else(|| bad("beta_a"))?,
                        });
                    }
                }
                other => {
                    return Err(config_err(
                        *lineno,
                        &format!("unknown key `{other}` in run `{}`", self.id),
                    ))
                }
            }
        }

        if !algorithm_seen {
            return Err(HarnessError::Config(format!(
                "run `{}` is missing `algorithm`",
                self.id
            )));
        }
        if !function_seen || entry.dimension == 0 {
            return Err(HarnessError::Config(format!(
                "run `{}` needs `function` and a positive `dimension`",
                self.id
            )));
        }
        if entry.repetitions == 0 {
            return Err(HarnessError::Config(format!(
                "run `{}`: repetitions must be >= 1",
                self.id
            )));
        }
        if entry.algorithm.uses_vae() {
            if vae.encoder.len() < 2 || vae.decoder.len() < 2 {
                return Err(HarnessError::Config(format!(
                    "run `{}` uses a VAE algorithm and needs `encoder` and `decoder` widths",
                    self.id
                )));
            }
            entry.vae = Some(vae);
        }
        if entry.algorithm == Algorithm::Rembo
            && entry.effective_dim.is_none()
            && entry.low_rank_ambient.is_none()
        {
            return Err(HarnessError::Config(format!(
                "run `{}`: rembo needs `effective_dim` (or a low-rank problem)",
                self.id
            )));
        }
        Ok(entry)
    }
}

fn entry_widths(value: &str) -> Option<Vec<usize>> {
    let widths: Option<Vec<usize>> = value.split(',').map(|v| parse(v.trim())).collect();
    widths.filter(|w| w.len() >= 2 && w.iter().all(|&x| x > 0))
}

fn parse<T: std::str::FromStr>(value: &str) -> Option<T> {
    value.parse().ok()
}

fn parse_bool(value: &str) -> Option<bool> {
    match value {
        "true" | "yes" | "1" => Some(true),
        "false" | "no" | "0" => Some(false),
        _ => None,
    }
}

impl RunEntry {
    /// Builds the objective this entry describes: catalog function, optional
    /// affine rescale, optional low-rank lift.
    pub fn build_objective(&self) -> Result<ObjectiveSpec, HarnessError> {
        let base = ObjectiveSpec::by_name(&self.function, self.dimension)
            .map_err(|e| HarnessError::Config(format!("run `{}`: {e}", self.id)))?;
        if let Some(ambient) = self.low_rank_ambient {
            let unit = BoxDomain::cube(self.dimension, -1.0, 1.0)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let scaled = scale_domain(&base, &unit)
                .map_err(|e| HarnessError::Config(format!("run `{}`: {e}", self.id)))?;
            let lr = make_low_rank(&scaled, ambient, self.low_rank_seed)
                .map_err(|e| HarnessError::Config(format!("run `{}`: {e}", self.id)))?;
            return Ok(lr.into_spec());
        }
        if let Some((lo, hi)) = self.scale_to {
            let target = BoxDomain::cube(self.dimension, lo, hi)
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            return scale_domain(&base, &target)
                .map_err(|e| HarnessError::Config(format!("run `{}`: {e}", self.id)));
        }
        Ok(base)
    }

    /// Run configuration for one repetition. The base seed feeds the shared
    /// VAE stream; `base_seed + rep` drives everything per-repetition.
    pub fn run_config(&self, rep: usize) -> RunConfig {
        let mut cfg = RunConfig::new(self.algorithm, self.budget, self.seed + rep as u64);
        cfg.vae_seed = self.seed;
        cfg.retrain_period = self.retrain_period;
        cfg.initial_count = self.initial_count;
        cfg.latent_half_width = self.latent_half_width;
        cfg.sdr = self.sdr;
        cfg.sdr_enabled = self.sdr_enabled;
        cfg.dml = self.dml;
        cfg.gp = self.gp.clone();
        cfg.acq = self.acq.clone();
        cfg.noise_sigma = self.noise_sigma;
        cfg.stochastic_decode = self.stochastic_decode;
        cfg.effective_dim = self.effective_dim.or({
            if self.low_rank_ambient.is_some() {
                Some(self.dimension)
            } else {
                None
            }
        });
        cfg.vae = self.vae.as_ref().map(|v| v.to_run_config());
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
# experiment
output_dir = out

[run ackley_bosdr]
algorithm = bo_sdr
function = ackley
dimension = 10
budget = 20
repetitions = 3
seed = 42
initial_count = 8

[run ackley_vae]
algorithm = v_bovae
function = ackley
dimension = 10
budget = 20
seed = 7
encoder = 10,5,2
decoder = 2,5,10
pool_size = 500
"#;

    #[test]
    fn parses_sections_and_defaults() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        assert_eq!(cfg.output_dir.as_deref(), Some("out"));
        assert_eq!(cfg.runs.len(), 2);
        let a = &cfg.runs[0];
        assert_eq!(a.id, "ackley_bosdr");
        assert_eq!(a.algorithm, Algorithm::BoSdr);
        assert_eq!(a.repetitions, 3);
        assert_eq!(a.initial_count, Some(8));
        assert_eq!(a.sdr.gamma_o, 0.7);
        let v = &cfg.runs[1];
        assert_eq!(v.vae.as_ref().unwrap().encoder, vec![10, 5, 2]);
        assert_eq!(v.vae.as_ref().unwrap().pool_size, 500);
    }

    #[test]
    fn rejects_unknown_keys_and_duplicates() {
        let bad = "[run a]\nalgorithm = bo_sdr\nfunction = ackley\ndimension = 2\nbudget = 1\nwat = 1\n";
        assert!(matches!(
            ExperimentConfig::parse(bad),
            Err(HarnessError::Config(_))
        ));
        let dup = "[run a]\nalgorithm = bo_sdr\nfunction = ackley\ndimension = 2\nbudget = 1\n[run a]\nalgorithm = bo_sdr\nfunction = ackley\ndimension = 2\nbudget = 1\n";
        assert!(matches!(
            ExperimentConfig::parse(dup),
            Err(HarnessError::Config(_))
        ));
    }

    #[test]
    fn vae_algorithms_require_architectures() {
        let bad = "[run a]\nalgorithm = v_bovae\nfunction = ackley\ndimension = 4\nbudget = 1\n";
        assert!(ExperimentConfig::parse(bad).is_err());
    }

    #[test]
    fn builds_low_rank_objectives() {
        let text = "[run lr]\nalgorithm = rembo\nfunction = shekel5\ndimension = 4\nlow_rank_ambient = 20\nbudget = 5\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let spec = cfg.runs[0].build_objective().unwrap();
        assert_eq!(spec.dim(), 20);
        assert!((spec.f_star() - (-10.1532)).abs() < 1e-3);
        let rc = cfg.runs[0].run_config(0);
        assert_eq!(rc.effective_dim, Some(4));
    }

    #[test]
    fn per_repetition_seeds_offset_from_base() {
        let cfg = ExperimentConfig::parse(SAMPLE).unwrap();
        let r0 = cfg.runs[0].run_config(0);
        let r1 = cfg.runs[0].run_config(1);
        assert_eq!(r0.seed, 42);
        assert_eq!(r1.seed, 43);
        assert_eq!(r0.vae_seed, r1.vae_seed);
    }

    #[test]
    fn scale_to_rescales_the_domain() {
        let text = "[run s]\nalgorithm = bo_sdr\nfunction = ackley\ndimension = 3\nscale_to = -3,3\nbudget = 1\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        let spec = cfg.runs[0].build_objective().unwrap();
        assert_eq!(spec.domain().lo(), &[-3.0, -3.0, -3.0]);
        assert_eq!(spec.domain().hi(), &[3.0, 3.0, 3.0]);
    }
}
