//! Monte-Carlo experiment harness.
//!
//! A trial is one full estimator run: its own graph instances, noise draws
//! and (for random attack modes) its own compromised set, all pulled from
//! the trial's dedicated RNG substream. Trials are therefore independent and
//! the whole experiment is reproducible bit-for-bit from the master seed,
//! regardless of thread count (`SAGE_THREADS` caps the worker pool).
//!
//! Per-trial draw order is part of the output contract: first the attack
//! set (fixed scenarios draw nothing), then per iteration the graph
//! instance followed by the stacked measurement noise. Both estimators in a
//! `both` run consume the same draws.

use std::fmt;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::attack::{AttackError, AttackScenario};
use crate::config::{EstimatorChoice, ResolvedAttack, ResolvedExperiment};
use crate::estimator::{
    baseline_step, consensus_residual, sage_step, EstimatorError, EstimatorState,
};
use crate::measurement::{MeasurementError, Parameter};
use crate::resilience::{check_resilience, ResilienceReport};
use crate::rng::{derive_rng, trial_stream};

/// Exact header of `metrics.csv`.
pub const METRICS_CSV_HEADER: &str =
    "trial,iter,estimator,max_rmse,mean_rmse,consensus_residual,saturated_frac";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("{estimator} estimates diverged to a non-finite value in trial {trial} at iteration {iter}")]
    NonFinite {
        estimator: EstimatorKind,
        trial: usize,
        iter: usize,
    },
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error("worker pool: {0}")]
    ThreadPool(String),
    #[error("decay slope needs at least {min} tail samples, got {got}")]
    ShortSeries { min: usize, got: usize },
    #[error("decay slope needs strictly positive iterations and values; sample {index} is not")]
    NonPositiveSeries { index: usize },
}

/// One of the two estimator variants a run can execute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Sage,
    Baseline,
}

impl EstimatorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            EstimatorKind::Sage => "sage",
            EstimatorKind::Baseline => "baseline",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Concrete estimators an [`EstimatorChoice`] expands to, saturating-gain
/// variant first.
pub fn estimator_kinds(choice: EstimatorChoice) -> Vec<EstimatorKind> {
    match choice {
        EstimatorChoice::Sage => vec![EstimatorKind::Sage],
        EstimatorChoice::Baseline => vec![EstimatorKind::Baseline],
        EstimatorChoice::Both => vec![EstimatorKind::Sage, EstimatorKind::Baseline],
    }
}

/// Error metrics of one estimator state after `iter` completed steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricSample {
    pub iter: usize,
    /// Largest per-agent root mean square error `max_n ‖x_n - θ‖₂ / √M`,
    /// i.e. per-component scale, comparable across parameter dimensions.
    pub max_rmse: f64,
    /// Mean over agents of the per-agent root mean square error.
    pub mean_rmse: f64,
    /// Stacked distance from the network-average estimate.
    pub consensus_residual: f64,
    /// Fraction of gains that saturated in the last step (0 for baseline).
    pub saturated_frac: f64,
}

/// Metrics of one estimate snapshot against the true parameter.
pub fn measure(state: &EstimatorState, theta: &Parameter, iter: usize) -> MetricSample {
    let mut max = 0.0f64;
    let mut sum = 0.0f64;
    let scale = (theta.as_vector().len() as f64).sqrt();
    for x in state.estimates() {
        let err = (x - theta.as_vector()).norm() / scale;
        max = max.max(err);
        sum += err;
    }
    MetricSample {
        iter,
        max_rmse: max,
        mean_rmse: sum / state.estimates().len() as f64,
        consensus_residual: consensus_residual(state),
        saturated_frac: state.saturated_fraction(),
    }
}

/// Metric series of one estimator within one trial, plus its end state.
#[derive(Debug, Clone)]
pub struct EstimatorTrace {
    pub kind: EstimatorKind,
    pub samples: Vec<MetricSample>,
    pub final_state: EstimatorState,
}

impl EstimatorTrace {
    pub fn final_sample(&self) -> &MetricSample {
        self.samples.last().expect("every trial records its final iteration")
    }

    /// `(iteration, value)` pairs of one metric, ready for slope fitting.
    pub fn series<F: Fn(&MetricSample) -> f64>(&self, metric: F) -> Vec<(f64, f64)> {
        self.samples
            .iter()
            .map(|s| (s.iter as f64, metric(s)))
            .collect()
    }
}

/// One complete trial: the attack set it drew and every estimator trace.
#[derive(Debug, Clone)]
pub struct TrialResult {
    pub trial: usize,
    pub scenario: AttackScenario,
    /// Traces in [`estimator_kinds`] order (saturating variant first).
    pub traces: Vec<EstimatorTrace>,
}

impl TrialResult {
    pub fn trace(&self, kind: EstimatorKind) -> &EstimatorTrace {
        self.traces
            .iter()
            .find(|t| t.kind == kind)
            .expect("trial ran this estimator")
    }
}

/// Runs one trial. Metrics are recorded whenever the completed-iteration
/// count hits a stride multiple, and always at the final iteration; a
/// non-finite estimate at a recorded point aborts the trial with a
/// diagnostic instead of silently propagating NaN.
pub fn run_trial(resolved: &ResolvedExperiment, trial: usize) -> Result<TrialResult, HarnessError> {
    let model = &resolved.model;
    let mut rng = derive_rng(resolved.seed, trial_stream(trial as u64));
    let scenario = resolved.attack.materialize(model, &mut rng)?;
    let kinds = estimator_kinds(resolved.estimator);
    let mut states: Vec<EstimatorState> =
        kinds.iter().map(|_| EstimatorState::new(model)).collect();
    let mut samples: Vec<Vec<MetricSample>> = vec![Vec::new(); kinds.len()];

    for t in 0..resolved.iterations {
        let graph_t = resolved.network.sample_instance(&mut rng);
        let clean = model.clean_measurement_stacked(&resolved.theta, &mut rng)?;
        let y = scenario.apply(t, &clean, model, &resolved.theta);
        for (i, kind) in kinds.iter().enumerate() {
            states[i] = match kind {
                EstimatorKind::Sage => {
                    sage_step(&states[i], &resolved.weights, &graph_t, &y, model)?
                }
                EstimatorKind::Baseline => {
                    baseline_step(&states[i], &resolved.weights, &graph_t, &y, model)?
                }
            };
        }
        let done = t + 1;
        if done % resolved.metric_stride == 0 || done == resolved.iterations {
            for (i, &kind) in kinds.iter().enumerate() {
                let s = measure(&states[i], &resolved.theta, done);
                if !(s.max_rmse.is_finite() && s.consensus_residual.is_finite()) {
                    return Err(HarnessError::NonFinite {
                        estimator: kind,
                        trial,
                        iter: done,
                    });
                }
                samples[i].push(s);
            }
        }
    }

    let traces = kinds
        .into_iter()
        .zip(samples)
        .zip(states)
        .map(|((kind, samples), final_state)| EstimatorTrace {
            kind,
            samples,
            final_state,
        })
        .collect();
    Ok(TrialResult {
        trial,
        scenario,
        traces,
    })
}

/// Mean and order statistics of one metric across trials. Quantiles use
/// linear interpolation between order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub median: f64,
    pub q05: f64,
    pub q95: f64,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (h - lo as f64)
}

impl Aggregate {
    pub fn from_values(values: &[f64]) -> Self {
        assert!(!values.is_empty(), "aggregate of an empty sample");
        let mut sorted = values.to_vec();
        sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite metrics"));
        Aggregate {
            mean: sorted.iter().sum::<f64>() / sorted.len() as f64,
            median: quantile(&sorted, 0.5),
            q05: quantile(&sorted, 0.05),
            q95: quantile(&sorted, 0.95),
        }
    }
}

/// Final-iteration aggregates of one estimator across all trials.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FinalAggregates {
    pub estimator: EstimatorKind,
    pub max_rmse: Aggregate,
    pub mean_rmse: Aggregate,
    pub consensus_residual: Aggregate,
    pub saturated_frac: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightsSummary {
    pub a: f64,
    pub tau1: f64,
    pub b: f64,
    pub tau2: f64,
    pub gamma: f64,
    pub tau_gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AttackSummary {
    /// `fixed`, `random_streams` or `random_agents`.
    pub mode: String,
    /// Stream count for fixed/random-stream modes, agent count otherwise.
    pub count: usize,
    pub strategy: String,
    /// 1-based stream indices, present only for fixed scenarios.
    pub compromised_streams: Option<Vec<usize>>,
}

/// Everything `summary.json` carries: the resolved experiment scale, the
/// spectral resilience verdict (fixed attacks only; random sets change per
/// trial) and final-iteration aggregates per estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunSummary {
    pub seed: u64,
    pub iterations: usize,
    pub trials: usize,
    pub n_agents: usize,
    pub m_dim: usize,
    pub total_streams: usize,
    pub theta: Vec<f64>,
    pub weights: WeightsSummary,
    pub attack: AttackSummary,
    pub resilience: Option<ResilienceReport>,
    pub aggregates: Vec<FinalAggregates>,
}

/// All trials of one experiment plus the cross-trial summary.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub trials: Vec<TrialResult>,
    pub summary: RunSummary,
}

fn thread_limit() -> Option<usize> {
    std::env::var("SAGE_THREADS")
        .ok()?
        .trim()
        .parse()
        .ok()
        .filter(|&n| n >= 1)
}

/// Runs every trial (in parallel, capped by `SAGE_THREADS`) and aggregates.
pub fn run_experiment(resolved: &ResolvedExperiment) -> Result<ExperimentResult, HarnessError> {
    let run = || -> Result<Vec<TrialResult>, HarnessError> {
        (0..resolved.trials)
            .into_par_iter()
            .map(|k| run_trial(resolved, k))
            .collect()
    };
    let trials = match thread_limit() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::ThreadPool(e.to_string()))?
            .install(run),
        None => run(),
    }?;
    let summary = summarize(resolved, &trials);
    Ok(ExperimentResult { trials, summary })
}

/// Cross-trial summary of finished trials.
pub fn summarize(resolved: &ResolvedExperiment, trials: &[TrialResult]) -> RunSummary {
    let kinds = estimator_kinds(resolved.estimator);
    let aggregates = kinds
        .iter()
        .enumerate()
        .map(|(i, &kind)| {
            let pick = |f: fn(&MetricSample) -> f64| {
                let values: Vec<f64> = trials
                    .iter()
                    .map(|tr| f(tr.traces[i].final_sample()))
                    .collect();
                Aggregate::from_values(&values)
            };
            FinalAggregates {
                estimator: kind,
                max_rmse: pick(|s| s.max_rmse),
                mean_rmse: pick(|s| s.mean_rmse),
                consensus_residual: pick(|s| s.consensus_residual),
                saturated_frac: pick(|s| s.saturated_frac),
            }
        })
        .collect();
    let resilience = match &resolved.attack {
        ResolvedAttack::Fixed(s) if !s.compromised().is_empty() => {
            check_resilience(&resolved.model, s.compromised()).ok()
        }
        _ => None,
    };
    let (mode, compromised_streams) = match &resolved.attack {
        ResolvedAttack::Fixed(s) => (
            "fixed",
            Some(s.compromised().iter().map(|&p| p + 1).collect()),
        ),
        ResolvedAttack::RandomStreams { .. } => ("random_streams", None),
        ResolvedAttack::RandomAgents { .. } => ("random_agents", None),
    };
    RunSummary {
        seed: resolved.seed,
        iterations: resolved.iterations,
        trials: resolved.trials,
        n_agents: resolved.model.n_agents(),
        m_dim: resolved.model.m_dim(),
        total_streams: resolved.model.total_streams(),
        theta: resolved.theta.as_vector().iter().copied().collect(),
        weights: WeightsSummary {
            a: resolved.weights.a(),
            tau1: resolved.weights.tau1(),
            b: resolved.weights.b(),
            tau2: resolved.weights.tau2(),
            gamma: resolved.weights.gamma_cap(),
            tau_gamma: resolved.weights.tau_gamma(),
        },
        attack: AttackSummary {
            mode: mode.to_string(),
            count: resolved.attack.count(),
            strategy: resolved.attack.strategy().kind().to_string(),
            compromised_streams,
        },
        resilience,
        aggregates,
    }
}

/// Renders `metrics.csv`: header then rows ordered trial, estimator
/// (saturating first), iteration. Floats use shortest round-trip formatting.
pub fn render_metrics_csv(trials: &[TrialResult]) -> String {
    let mut out = String::from(METRICS_CSV_HEADER);
    out.push('\n');
    for tr in trials {
        for trace in &tr.traces {
            for s in &trace.samples {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{}",
                    tr.trial,
                    s.iter,
                    trace.kind.as_str(),
                    s.max_rmse,
                    s.mean_rmse,
                    s.consensus_residual,
                    s.saturated_frac
                )
                .expect("writing to a String cannot fail");
            }
        }
    }
    out
}

/// Writes `metrics.csv` and `summary.json` into `dir` (created if missing);
/// returns their paths.
pub fn write_outputs(
    dir: &Path,
    result: &ExperimentResult,
) -> Result<(PathBuf, PathBuf), HarnessError> {
    fs::create_dir_all(dir)?;
    let csv_path = dir.join("metrics.csv");
    fs::write(&csv_path, render_metrics_csv(&result.trials))?;
    let json_path = dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&result.summary)?;
    text.push('\n');
    fs::write(&json_path, text)?;
    Ok((csv_path, json_path))
}

/// One point of a parameter sweep: the swept value and the resulting
/// final-iteration aggregates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub aggregates: Vec<FinalAggregates>,
}

/// Reruns the experiment for each saturation cap. Every point reuses the
/// master seed, so points are paired draw-for-draw.
pub fn sweep_gamma(
    resolved: &ResolvedExperiment,
    gammas: &[f64],
) -> Result<Vec<SweepPoint>, HarnessError> {
    gammas
        .iter()
        .map(|&gamma| {
            let mut exp = resolved.clone();
            exp.weights = exp.weights.with_gamma_cap(gamma)?;
            let result = run_experiment(&exp)?;
            Ok(SweepPoint {
                value: gamma,
                aggregates: result.summary.aggregates,
            })
        })
        .collect()
}

/// Reruns the experiment with `count` uniformly random compromised streams
/// per trial, keeping the configured strategy. Count 0 reduces to the clean
/// run on identical draws.
pub fn sweep_attack_count(
    resolved: &ResolvedExperiment,
    counts: &[usize],
) -> Result<Vec<SweepPoint>, HarnessError> {
    let strategy = resolved.attack.strategy().clone();
    counts
        .iter()
        .map(|&count| {
            if count >= resolved.model.total_streams() {
                return Err(HarnessError::Attack(AttackError::InvalidCount {
                    count,
                    total: resolved.model.total_streams(),
                }));
            }
            let mut exp = resolved.clone();
            exp.attack = ResolvedAttack::RandomStreams {
                count,
                strategy: strategy.clone(),
            };
            let result = run_experiment(&exp)?;
            Ok(SweepPoint {
                value: count as f64,
                aggregates: result.summary.aggregates,
            })
        })
        .collect()
}

/// Least-squares slope of `ln v` against `ln t` over the last half of the
/// series: the empirical decay exponent of a metric.
pub fn decay_slope(series: &[(f64, f64)]) -> Result<f64, HarnessError> {
    const MIN_TAIL: usize = 10;
    let tail = &series[series.len() / 2..];
    if tail.len() < MIN_TAIL {
        return Err(HarnessError::ShortSeries {
            min: MIN_TAIL,
            got: tail.len(),
        });
    }
    if let Some(index) = tail.iter().position(|&(t, v)| !(t > 0.0 && v > 0.0)) {
        return Err(HarnessError::NonPositiveSeries {
            index: series.len() / 2 + index,
        });
    }
    let xs: Vec<f64> = tail.iter().map(|&(t, _)| t.ln()).collect();
    let ys: Vec<f64> = tail.iter().map(|&(_, v)| v.ln()).collect();
    let xbar = xs.iter().sum::<f64>() / xs.len() as f64;
    let ybar = ys.iter().sum::<f64>() / ys.len() as f64;
    let mut cov = 0.0;
    let mut var = 0.0;
    for (x, y) in xs.iter().zip(&ys) {
        cov += (x - xbar) * (y - ybar);
        var += (x - xbar) * (x - xbar);
    }
    Ok(cov / var)
}
