//! Performance and data profiles over solver/problem result sets.
//!
//! A problem is solved at accuracy `tau` once the best-so-far value drops to
//! `f* + tau (f*_0 - f*)`, where `f*_0` is the best of the initial design.
//! Performance profiles plot, per solver, the fraction of problems whose
//! evaluation count stays within a factor `alpha` of the fastest solver;
//! data profiles plot the solved fraction against a budget of
//! `alpha (n_p + 1)` evaluations.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Evaluations needed by one (solver, problem) pair; `None` means never.
pub type EvalsToSolve = Option<usize>;

/// One solver's result on one problem instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverRecord {
    pub solver: String,
    pub problem: String,
    /// Problem dimension `n_p`, used by the data-profile budget scaling.
    pub dimension: usize,
    /// Best-so-far objective after each counted evaluation.
    pub history: Vec<f64>,
    pub f_star: f64,
    /// Best value over the initial design.
    pub f0_star: f64,
}

/// A non-decreasing step curve with values in `[0, 1]`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ProfileCurve {
    pub solver: String,
    pub alphas: Vec<f64>,
    pub fractions: Vec<f64>,
}

/// Smallest 1-based evaluation count whose best-so-far value meets the
/// accuracy threshold; `None` if the history never does. A problem already
/// solved by the initial design (`f0_star <= f_star`) returns `Some(0)`.
pub fn evals_to_accuracy(record: &SolverRecord, tau: f64) -> EvalsToSolve {
    assert!(tau > 0.0 && tau < 1.0, "tau must be in (0,1)");
    if record.f0_star <= record.f_star {
        return Some(0);
    }
    let threshold = record.f_star + tau * (record.f0_star - record.f_star);
    record
        .history
        .iter()
        .position(|&v| v <= threshold)
        .map(|idx| idx + 1)
}

fn solver_ids(records: &[SolverRecord]) -> Vec<String> {
    let mut ids: Vec<String> = Vec::new();
    for r in records {
        if !ids.contains(&r.solver) {
            ids.push(r.solver.clone());
        }
    }
    ids
}

fn problem_ids(records: &[SolverRecord]) -> Vec<String> {
    let mut ids: Vec<String> = Vec::new();
    for r in records {
        if !ids.contains(&r.problem) {
            ids.push(r.problem.clone());
        }
    }
    ids
}

/// Performance profiles at accuracy `tau`, on a log2 alpha grid in quarter
/// steps. Unsolved problems never enter a numerator but always count in the
/// denominator.
pub fn performance_profile(records: &[SolverRecord], tau: f64) -> Vec<ProfileCurve> {
    let solvers = solver_ids(records);
    let problems = problem_ids(records);
    // ratios[problem][solver] = r_{p,s}
    let mut ratios: BTreeMap<&str, BTreeMap<&str, f64>> = BTreeMap::new();
    let mut max_ratio: f64 = 1.0;
    for p in &problems {
        let evals: Vec<(&str, EvalsToSolve)> = records
            .iter()
            .filter(|r| &r.problem == p)
            .map(|r| (r.solver.as_str(), evals_to_accuracy(r, tau)))
            .collect();
        let best = evals
            .iter()
            .filter_map(|(_, e)| *e)
            .min();
        let Some(best) = best else { continue }; // nobody solved it
        let best = best.max(1) as f64;
        let entry = ratios.entry(p.as_str()).or_default();
        for (s, e) in evals {
            if let Some(e) = e {
                let ratio = e.max(1) as f64 / best;
                entry.insert(s, ratio);
                max_ratio = max_ratio.max(ratio);
            }
        }
    }

    // Quarter-step log2 grid covering [1, max_ratio].
    let top = (max_ratio.log2().ceil() as i64).max(0) * 4;
    let alphas: Vec<f64> = (0..=top).map(|i| 2f64.powf(i as f64 / 4.0)).collect();
    let denom = problems.len() as f64;

    solvers
        .into_iter()
        .map(|s| {
            let fractions = alphas
                .iter()
                .map(|&a| {
                    let solved = ratios
                        .values()
                        .filter(|per_solver| {
                            per_solver
                                .get(s.as_str())
                                .is_some_and(|&r| r <= a * (1.0 + 1e-12))
                        })
                        .count();
                    solved as f64 / denom
                })
                .collect();
            ProfileCurve {
                solver: s,
                alphas: alphas.clone(),
                fractions,
            }
        })
        .collect()
}

/// Data profiles: solved fraction against groups of `n_p + 1` evaluations,
/// on the unit grid `alpha = 0..=n_groups`.
pub fn data_profile(records: &[SolverRecord], tau: f64, n_groups: usize) -> Vec<ProfileCurve> {
    assert!(n_groups > 0, "the budget in groups must be positive");
    let solvers = solver_ids(records);
    let problems = problem_ids(records);
    let denom = problems.len() as f64;
    let alphas: Vec<f64> = (0..=n_groups).map(|a| a as f64).collect();

    solvers
        .into_iter()
        .map(|s| {
            let mine: Vec<(usize, EvalsToSolve)> = records
                .iter()
                .filter(|r| r.solver == s)
                .map(|r| (r.dimension, evals_to_accuracy(r, tau)))
                .collect();
            let fractions = alphas
                .iter()
                .map(|&a| {
                    let solved = mine
                        .iter()
                        .filter(|(n_p, e)| {
                            e.is_some_and(|e| e as f64 <= a * (*n_p as f64 + 1.0))
                        })
                        .count();
                    solved as f64 / denom
                })
                .collect();
            ProfileCurve {
                solver: s,
                alphas: alphas.clone(),
                fractions,
            }
        })
        .collect()
}

/// Solved fraction of a solver at `alpha -> infinity` (the curve plateau).
pub fn solved_fraction(records: &[SolverRecord], solver: &str, tau: f64) -> f64 {
    let problems = problem_ids(records).len() as f64;
    let solved = records
        .iter()
        .filter(|r| r.solver == solver)
        .filter(|r| evals_to_accuracy(r, tau).is_some())
        .count();
    solved as f64 / problems
}
