//! Experiment harness: config-driven runs, seeded repetitions, VAE
//! checkpoint caching, CSV traces, aggregation, plots, and profile reports.
//!
//! Layout of a results directory:
//!
//! ```text
//! <out>/
//!   manifest.json                 config hash + content hash of every output
//!   runs/<id>/run.json            metadata (f_star, seeds, wall time, ...)
//!   runs/<id>/trace_seed<s>.csv   one trace per repetition
//!   aggregates/<id>.csv           `aggregate` output
//!   plots/<objective>.svg         `plot` output
//!   profiles/...                  `profile` output
//! ```

pub mod config;
pub mod svg;
pub mod traces;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::algorithms::{self, RunError};
use crate::profiles::{self, SolverRecord};
use crate::vae::VaeModel;

use config::{ExperimentConfig, RunEntry};
use svg::{PlotOptions, Series};
use traces::{RunMeta, SeedMeta, TraceColumns};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("run `{run}` failed: {source}")]
    Run {
        run: String,
        #[source]
        source: RunError,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// CLI exit code: 1 for configuration problems, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            _ => 2,
        }
    }
}

/// Environment variable overriding the VAE checkpoint cache directory.
pub const CACHE_DIR_ENV: &str = "LSBO_CACHE_DIR";

fn cache_dir_for(cfg: &ExperimentConfig, out_dir: &Path) -> PathBuf {
    if let Ok(dir) = std::env::var(CACHE_DIR_ENV) {
        if !dir.is_empty() {
            return PathBuf::from(dir);
        }
    }
    match &cfg.cache_dir {
        Some(dir) => PathBuf::from(dir),
        None => out_dir.join("vae_cache"),
    }
}

/// Cache key: every input that determines the pre-trained model.
fn vae_cache_key(entry: &RunEntry, objective: &crate::testbed::ObjectiveSpec) -> Option<String> {
    let vae = entry.vae.as_ref()?;
    let mut hasher = Sha256::new();
    let desc = serde_json::json!({
        "objective": objective.name(),
        "dim": objective.dim(),
        "lo": objective.domain().lo(),
        "hi": objective.domain().hi(),
        "encoder": vae.encoder,
        "decoder": vae.decoder,
        "pool_size": vae.pool_size,
        "pretrain_epochs": vae.pretrain_epochs,
        "pretrain_batch": vae.pretrain_batch,
        "pretrain_lr": vae.pretrain_lr,
        "beta": vae.beta_anneal.map(|b| (b.beta_i, b.beta_f, b.beta_s, b.beta_a)),
        "vae_seed": entry.seed,
    });
    hasher.update(desc.to_string().as_bytes());
    Some(hex(&hasher.finalize()))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Pre-trains (or loads) every distinct VAE the config needs. Returns the
/// models keyed by cache key.
fn prepare_vaes(
    cfg: &ExperimentConfig,
    cache_dir: &Path,
) -> Result<BTreeMap<String, VaeModel>, HarnessError> {
    std::fs::create_dir_all(cache_dir)?;
    // Distinct (key, entry) pairs; identical keys share one training run.
    let mut wanted: BTreeMap<String, &RunEntry> = BTreeMap::new();
    let mut objectives: BTreeMap<String, crate::testbed::ObjectiveSpec> = BTreeMap::new();
    for entry in &cfg.runs {
        if entry.vae.is_none() {
            continue;
        }
        let objective = entry.build_objective()?;
        if let Some(key) = vae_cache_key(entry, &objective) {
            wanted.entry(key.clone()).or_insert(entry);
            objectives.entry(key).or_insert(objective);
        }
    }

    let results: Vec<(String, Result<VaeModel, HarnessError>)> = wanted
        .into_iter()
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(key, entry)| {
            let base = cache_dir.join(&key[..16]);
            if base.with_extension("bin").exists() {
                match VaeModel::load_checkpoint(&base) {
                    Ok((model, _)) => return (key, Ok(model)),
                    Err(_) => { /* corrupt cache entry: retrain below */ }
                }
            }
            let objective = &objectives[&key];
            let run_cfg = entry.run_config(0);
            let model = match algorithms::pretrain_vae(objective, &run_cfg) {
                Ok(m) => m,
                Err(e) => {
                    return (
                        key,
                        Err(HarnessError::Run {
                            run: entry.id.clone(),
                            source: e,
                        }),
                    )
                }
            };
            // Atomic publish: write to a temp base, then rename both files.
            let tmp = cache_dir.join(format!(".tmp-{}", &key[..16]));
            if let Err(e) = model.save_checkpoint(&tmp, entry.seed) {
                return (
                    key,
                    Err(HarnessError::Run {
                        run: entry.id.clone(),
                        source: e.into(),
                    }),
                );
            }
            for ext in ["bin", "json"] {
                if let Err(e) =
                    std::fs::rename(tmp.with_extension(ext), base.with_extension(ext))
                {
                    return (key, Err(HarnessError::Io(e)));
                }
            }
            (key, Ok(model))
        })
        .collect();

    let mut models = BTreeMap::new();
    for (key, result) in results {
        models.insert(key, result?);
    }
    Ok(models)
}

/// Pre-trains every VAE referenced by the config into the cache; returns the
/// number of models now available.
pub fn train_vaes(config_path: &Path) -> Result<usize, HarnessError> {
    let text = std::fs::read_to_string(config_path)?;
    let cfg = ExperimentConfig::parse(&text)?;
    let out_dir = PathBuf::from(cfg.output_dir.clone().unwrap_or_else(|| "results".into()));
    std::fs::create_dir_all(&out_dir)?;
    let cache = cache_dir_for(&cfg, &out_dir);
    Ok(prepare_vaes(&cfg, &cache)?.len())
}

/// Runs every `[run]` section of the config with all repetitions and writes
/// traces, metadata, and the manifest. Returns the results directory.
pub fn run_experiment(
    config_path: &Path,
    output_override: Option<&Path>,
) -> Result<PathBuf, HarnessError> {
    let text = std::fs::read_to_string(config_path)?;
    let cfg = ExperimentConfig::parse(&text)?;
    let out_dir = match output_override {
        Some(dir) => dir.to_path_buf(),
        None => PathBuf::from(cfg.output_dir.clone().unwrap_or_else(|| "results".into())),
    };
    std::fs::create_dir_all(out_dir.join("runs"))?;
    let cache = cache_dir_for(&cfg, &out_dir);
    let models = prepare_vaes(&cfg, &cache)?;

    // Flatten (run, repetition) so the pool sees every unit of work.
    let mut work = Vec::new();
    for entry in &cfg.runs {
        let objective = entry.build_objective()?;
        let key = vae_cache_key(entry, &objective);
        for rep in 0..entry.repetitions {
            work.push((entry, objective.clone(), key.clone(), rep));
        }
    }

    let results: Vec<Result<(String, SeedMeta, RunMeta), HarnessError>> = work
        .into_par_iter()
        .map(|(entry, objective, key, rep)| {
            let run_cfg = entry.run_config(rep);
            let model = key.as_ref().and_then(|k| models.get(k));
            let trace = algorithms::run(&objective, &run_cfg, model).map_err(|e| {
                HarnessError::Run {
                    run: entry.id.clone(),
                    source: e,
                }
            })?;
            let run_dir = PathBuf::from("runs").join(&entry.id);
            let file = run_dir.join(format!("trace_seed{}.csv", run_cfg.seed));
            let seed_meta = SeedMeta {
                seed: run_cfg.seed,
                trace_file: file.to_string_lossy().into_owned(),
                initial_count: trace.initial_count,
                best_f: trace.best_f(),
                wall_secs: trace.records.iter().map(|r| r.wall_secs).sum(),
            };
            let meta = RunMeta {
                run_id: entry.id.clone(),
                algorithm: entry.algorithm.name().to_string(),
                objective: trace.objective.clone(),
                dimension: trace.dim,
                search_dim: trace.search_dim,
                f_star: trace.f_star,
                budget: entry.budget,
                repetitions: entry.repetitions,
                base_seed: entry.seed,
                per_seed: Vec::new(),
            };
            let abs_dir = out_dir.join(&run_dir);
            std::fs::create_dir_all(&abs_dir)?;
            traces::write_trace_csv(&out_dir.join(&file), &trace)?;
            Ok((entry.id.clone(), seed_meta, meta))
        })
        .collect();

    // Group per-seed results into run.json files (sorted for determinism).
    let mut grouped: BTreeMap<String, (RunMeta, Vec<SeedMeta>)> = BTreeMap::new();
    for result in results {
        let (id, seed_meta, meta) = result?;
        let slot = grouped.entry(id).or_insert((meta, Vec::new()));
        slot.1.push(seed_meta);
    }
    for (id, (mut meta, mut seeds)) in grouped {
        seeds.sort_by_key(|s| s.seed);
        meta.per_seed = seeds;
        traces::write_run_meta(&out_dir.join("runs").join(&id).join("run.json"), &meta)?;
    }

    write_manifest(&out_dir, &text)?;
    Ok(out_dir)
}

/// Manifest: config hash plus a content hash for every file under the
/// results directory.
fn write_manifest(out_dir: &Path, config_text: &str) -> Result<(), HarnessError> {
    let mut files = Vec::new();
    collect_files(out_dir, out_dir, &mut files)?;
    files.sort();
    let entries: Vec<serde_json::Value> = files
        .iter()
        .filter(|p| p != &"manifest.json")
        .map(|rel| {
            let bytes = std::fs::read(out_dir.join(rel))?;
            let mut h = Sha256::new();
            h.update(&bytes);
            Ok(serde_json::json!({ "path": rel, "sha256": hex(&h.finalize()) }))
        })
        .collect::<Result<_, HarnessError>>()?;
    let mut config_hash = Sha256::new();
    config_hash.update(config_text.as_bytes());
    let manifest = serde_json::json!({
        "version": env!("CARGO_PKG_VERSION"),
        "config_sha256": hex(&config_hash.finalize()),
        "outputs": entries,
    });
    std::fs::write(
        out_dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| HarnessError::Data(e.to_string()))?,
    )?;
    Ok(())
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<String>) -> Result<(), HarnessError> {
    if !dir.exists() {
        return Ok(());
    }
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let path = entry.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .unwrap_or(&path)
                .to_string_lossy()
                .replace('\\', "/");
            out.push(rel);
        }
    }
    Ok(())
}

/// Pointwise mean and population std of incumbent series across seeds.
#[derive(Debug, Clone)]
pub struct AggregateCurve {
    /// 0 = after the initial design, then one entry per loop evaluation.
    pub iterations: Vec<usize>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub per_seed: Vec<Vec<f64>>,
}

/// Aggregates incumbent series of equal meaning; a length mismatch truncates
/// to the shortest with a warning on stderr.
pub fn aggregate(series: &[Vec<f64>]) -> Result<AggregateCurve, HarnessError> {
    if series.is_empty() {
        return Err(HarnessError::Data("no traces to aggregate".into()));
    }
    let min_len = series.iter().map(Vec::len).min().unwrap_or(0);
    if series.iter().any(|s| s.len() != min_len) {
        eprintln!("warning: trace lengths differ; truncating to {min_len}");
    }
    let n = series.len() as f64;
    let mut mean = Vec::with_capacity(min_len);
    let mut std = Vec::with_capacity(min_len);
    for i in 0..min_len {
        let m = series.iter().map(|s| s[i]).sum::<f64>() / n;
        let v = series.iter().map(|s| (s[i] - m) * (s[i] - m)).sum::<f64>() / n;
        mean.push(m);
        std.push(v.sqrt());
    }
    Ok(AggregateCurve {
        iterations: (0..min_len).collect(),
        mean,
        std,
        per_seed: series.iter().map(|s| s[..min_len].to_vec()).collect(),
    })
}

fn run_dirs(results: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let runs = results.join("runs");
    if !runs.exists() {
        return Err(HarnessError::Data(format!(
            "{} has no runs/ directory",
            results.display()
        )));
    }
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&runs)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.is_dir() && p.join("run.json").exists())
        .collect();
    dirs.sort();
    Ok(dirs)
}

fn load_run(dir: &Path) -> Result<(RunMeta, Vec<(u64, TraceColumns)>), HarnessError> {
    let meta = traces::read_run_meta(&dir.join("run.json"))?;
    let mut cols = Vec::new();
    for seed in &meta.per_seed {
        let path = dir.join(
            Path::new(&seed.trace_file)
                .file_name()
                .ok_or_else(|| HarnessError::Data("bad trace path".into()))?,
        );
        cols.push((seed.seed, traces::read_trace_csv(&path)?));
    }
    Ok((meta, cols))
}

/// Writes `aggregates/<run_id>.csv` for every run in the results directory.
pub fn aggregate_dir(results: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    let out = results.join("aggregates");
    std::fs::create_dir_all(&out)?;
    let mut written = Vec::new();
    for dir in run_dirs(results)? {
        let (meta, cols) = load_run(&dir)?;
        let series: Vec<Vec<f64>> = cols.iter().map(|(_, c)| c.incumbent_series()).collect();
        let curve = aggregate(&series)?;
        let path = out.join(format!("{}.csv", meta.run_id));
        let mut w = csv::Writer::from_path(&path)?;
        let mut header = vec![
            "iteration".to_string(),
            "mean_best".to_string(),
            "std_best".to_string(),
        ];
        header.extend(cols.iter().map(|(s, _)| format!("seed{s}")));
        w.write_record(&header)?;
        for i in 0..curve.iterations.len() {
            let mut row = vec![
                curve.iterations[i].to_string(),
                format!("{}", curve.mean[i]),
                format!("{}", curve.std[i]),
            ];
            row.extend(curve.per_seed.iter().map(|s| format!("{}", s[i])));
            w.write_record(&row)?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// Renders one convergence SVG per objective, with a mean line and a
/// +-1 std band per run.
pub fn plot_dir(results: &Path, log_y: bool) -> Result<Vec<PathBuf>, HarnessError> {
    let out = results.join("plots");
    std::fs::create_dir_all(&out)?;
    let mut groups: BTreeMap<String, Vec<Series>> = BTreeMap::new();
    for dir in run_dirs(results)? {
        let (meta, cols) = load_run(&dir)?;
        let series: Vec<Vec<f64>> = cols.iter().map(|(_, c)| c.incumbent_series()).collect();
        let curve = aggregate(&series)?;
        let xs: Vec<f64> = curve.iterations.iter().map(|&i| i as f64).collect();
        let lo: Vec<f64> = curve.mean.iter().zip(&curve.std).map(|(m, s)| m - s).collect();
        let hi: Vec<f64> = curve.mean.iter().zip(&curve.std).map(|(m, s)| m + s).collect();
        let key = format!("{}_D{}", meta.objective, meta.dimension);
        groups.entry(key).or_default().push(Series {
            label: meta.run_id.clone(),
            xs,
            ys: curve.mean,
            band: Some((lo, hi)),
        });
    }
    let mut written = Vec::new();
    for (key, series) in groups {
        let opts = PlotOptions {
            title: key.clone(),
            x_label: "iteration".into(),
            y_label: "best f".into(),
            log_y,
            step: false,
        };
        let path = out.join(format!("{key}.svg"));
        std::fs::write(&path, svg::render(&series, &opts))?;
        written.push(path);
    }
    Ok(written)
}

/// Builds profile inputs from every (run, seed) trace. Each (problem,
/// repetition) pair is a separate profile instance; solvers are algorithm
/// names.
fn solver_records(results: &Path) -> Result<Vec<SolverRecord>, HarnessError> {
    let mut records = Vec::new();
    for dir in run_dirs(results)? {
        let (meta, cols) = load_run(&dir)?;
        if !meta.f_star.is_finite() {
            eprintln!(
                "warning: run `{}` has no usable f_star; excluded from profiles",
                meta.run_id
            );
            continue;
        }
        for (rep, (_, trace)) in cols.iter().enumerate() {
            let Some(f0) = trace.initial_best() else {
                eprintln!("warning: run `{}` trace has no initial design", meta.run_id);
                continue;
            };
            records.push(SolverRecord {
                solver: meta.algorithm.clone(),
                problem: format!("{}_D{}_r{}", meta.objective, meta.dimension, rep),
                dimension: meta.dimension,
                history: trace.loop_history(),
                f_star: meta.f_star,
                f0_star: f0,
            });
        }
    }
    Ok(records)
}

fn write_profile_csv(
    path: &Path,
    curves: &[profiles::ProfileCurve],
) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["alpha".to_string()];
    header.extend(curves.iter().map(|c| c.solver.clone()));
    w.write_record(&header)?;
    if let Some(first) = curves.first() {
        for (i, &alpha) in first.alphas.iter().enumerate() {
            let mut row = vec![format!("{alpha}")];
            row.extend(curves.iter().map(|c| format!("{}", c.fractions[i])));
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn profile_series(curves: &[profiles::ProfileCurve]) -> Vec<Series> {
    curves
        .iter()
        .map(|c| Series {
            label: c.solver.clone(),
            xs: c.alphas.clone(),
            ys: c.fractions.clone(),
            band: None,
        })
        .collect()
}

/// Emits performance and data profiles per accuracy level, plus a
/// solved-percentage table across solvers.
pub fn profile_report(
    results: &Path,
    taus: &[f64],
    n_groups: usize,
) -> Result<Vec<PathBuf>, HarnessError> {
    if taus.is_empty() {
        return Err(HarnessError::Config("need at least one --tau".into()));
    }
    let records = solver_records(results)?;
    if records.is_empty() {
        return Err(HarnessError::Data("no traces found for profiling".into()));
    }
    let out = results.join("profiles");
    std::fs::create_dir_all(&out)?;
    let mut written = Vec::new();

    let mut solvers: Vec<String> = Vec::new();
    for r in &records {
        if !solvers.contains(&r.solver) {
            solvers.push(r.solver.clone());
        }
    }

    for &tau in taus {
        let perf = profiles::performance_profile(&records, tau);
        let perf_csv = out.join(format!("performance_tau{tau}.csv"));
        write_profile_csv(&perf_csv, &perf)?;
        let perf_svg = out.join(format!("performance_tau{tau}.svg"));
        std::fs::write(
            &perf_svg,
            svg::render(
                &profile_series(&perf),
                &PlotOptions {
                    title: format!("performance profile, tau = {tau}"),
                    x_label: "alpha (ratio to best)".into(),
                    y_label: "fraction of problems".into(),
                    log_y: false,
                    step: true,
                },
            ),
        )?;
        let data = profiles::data_profile(&records, tau, n_groups);
        let data_csv = out.join(format!("data_tau{tau}.csv"));
        write_profile_csv(&data_csv, &data)?;
        let data_svg = out.join(format!("data_tau{tau}.svg"));
        std::fs::write(
            &data_svg,
            svg::render(
                &profile_series(&data),
                &PlotOptions {
                    title: format!("data profile, tau = {tau}"),
                    x_label: "groups of n_p+1 evaluations".into(),
                    y_label: "fraction of problems".into(),
                    log_y: false,
                    step: true,
                },
            ),
        )?;
        written.extend([perf_csv, perf_svg, data_csv, data_svg]);
    }

    // Solved-percentage table: one row per solver, one column per tau.
    let solved_csv = out.join("solved.csv");
    {
        let mut w = csv::Writer::from_path(&solved_csv)?;
        let mut header = vec!["solver".to_string()];
        header.extend(taus.iter().map(|t| format!("tau{t}")));
        w.write_record(&header)?;
        for s in &solvers {
            let mut row = vec![s.clone()];
            for &tau in taus {
                row.push(format!("{}", profiles::solved_fraction(&records, s, tau)));
            }
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    written.push(solved_csv);
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn aggregate_mean_and_population_std() {
        let curve = aggregate(&[vec![1.0, 1.0], vec![3.0, 3.0]]).unwrap();
        assert_eq!(curve.mean, vec![2.0, 2.0]);
        assert_eq!(curve.std, vec![1.0, 1.0]);
        let single = aggregate(&[vec![2.0, 1.0]]).unwrap();
        assert_eq!(single.std, vec![0.0, 0.0]);
    }

    #[test]
    fn aggregate_truncates_mismatched_lengths() {
        let curve = aggregate(&[vec![1.0, 2.0, 3.0], vec![1.0, 2.0]]).unwrap();
        assert_eq!(curve.iterations.len(), 2);
    }

    #[test]
    fn aggregate_matches_spreadsheet_fixture() {
        // Three traces; means and population stds computed independently.
        let t1 = vec![10.0, 8.0, 8.0];
        let t2 = vec![9.0, 9.0, 7.0];
        let t3 = vec![11.0, 10.0, 6.0];
        let curve = aggregate(&[t1, t2, t3]).unwrap();
        let expect_mean = [10.0, 9.0, 7.0];
        let expect_std = [
            (2.0_f64 / 3.0).sqrt(),
            (2.0_f64 / 3.0).sqrt(),
            (2.0_f64 / 3.0).sqrt(),
        ];
        for i in 0..3 {
            assert!((curve.mean[i] - expect_mean[i]).abs() < 1e-12);
            assert!((curve.std[i] - expect_std[i]).abs() < 1e-12);
        }
    }
}
