//! Consensus+innovations estimation with adaptively saturating gains.
//!
//! Every agent keeps an estimate `x_n(t)` (initialized to zero) and the
//! running average `ȳ_n(t)` of its own measurements. One synchronous
//! iteration reads the sampled communication graph and all iteration-`t`
//! neighbor estimates, then moves each agent by a consensus term and a
//! gain-modulated innovation term:
//!
//! ```text
//! x_n(t+1) = x_n(t) - β_t Σ_{l ∈ Ω_n(t)} (x_n(t) - x_l(t))
//!                  + α_t H_nᵀ K_n(t) (ȳ_n(t) - H_n x_n(t))
//! ```
//!
//! `K_n(t)` is diagonal with per-stream entries `k_p = min(1, γ_t/|inn_p|)`,
//! so every innovation's influence is clamped to the decaying envelope
//! `γ_t`: a compromised stream can inject at most `γ_t` per iteration no
//! matter what it reports. The running average is refreshed with `y_n(t)`
//! before the gains are computed. The unsaturated baseline (`K = I`) shares
//! the same update and the same running-average innovations; where no gain
//! saturates the two produce bit-identical states.
//!
//! Weights decay polynomially: `α_t = a/(t+1)^τ1`, `β_t = b/(t+1)^τ2`,
//! `γ_t = Γ/(t+1)^τγ`, with `0 < τ2 < τ1 < 1` and
//! `0 < τγ < min(1/2, τ1 - τ2)`. Live links carry unit weight.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::graph::{max_laplacian_eigenvalue, Graph, CONNECTIVITY_TOL};
use crate::measurement::{MeasurementModel, RunningAverage};

#[derive(Debug, Error)]
pub enum EstimatorError {
    #[error("invalid weight schedule: {0}")]
    InvalidSchedule(String),
    #[error("graph has {graph} vertices but the model has {model} agents")]
    AgentCountMismatch { graph: usize, model: usize },
    #[error("stacked measurement has {got} streams, model has {expected}")]
    MeasurementLength { expected: usize, got: usize },
    #[error("state does not match the model (agent {agent})")]
    StateShape { agent: usize },
    #[error("graph is degenerate: the largest Laplacian eigenvalue is zero")]
    DegenerateGraph,
}

/// Decaying weight schedule `(α_t, β_t, γ_t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightSchedule {
    a: f64,
    tau1: f64,
    b: f64,
    tau2: f64,
    gamma_cap: f64,
    tau_gamma: f64,
}

impl WeightSchedule {
    pub fn new(
        a: f64,
        tau1: f64,
        b: f64,
        tau2: f64,
        gamma_cap: f64,
        tau_gamma: f64,
    ) -> Result<Self, EstimatorError> {
        let err = |msg: String| Err(EstimatorError::InvalidSchedule(msg));
        for (name, v) in [("a", a), ("b", b), ("gamma_cap", gamma_cap)] {
            if !(v.is_finite() && v > 0.0) {
                return err(format!("{name} must be a positive real, got {v}"));
            }
        }
        for (name, v) in [("tau1", tau1), ("tau2", tau2), ("tau_gamma", tau_gamma)] {
            if !v.is_finite() {
                return err(format!("{name} must be finite, got {v}"));
            }
        }
        if !(0.0 < tau2 && tau2 < tau1 && tau1 < 1.0) {
            return err(format!(
                "exponents must satisfy 0 < tau2 < tau1 < 1, got tau1={tau1}, tau2={tau2}"
            ));
        }
        let gamma_limit = 0.5f64.min(tau1 - tau2);
        if !(0.0 < tau_gamma && tau_gamma < gamma_limit) {
            return err(format!(
                "tau_gamma must lie in (0, min(1/2, tau1 - tau2)) = (0, {gamma_limit}), got {tau_gamma}"
            ));
        }
        Ok(Self {
            a,
            tau1,
            b,
            tau2,
            gamma_cap,
            tau_gamma,
        })
    }

    /// Innovation weight `a / (t+1)^τ1`.
    pub fn alpha(&self, t: usize) -> f64 {
        self.a / ((t + 1) as f64).powf(self.tau1)
    }

    /// Consensus weight `b / (t+1)^τ2`.
    pub fn beta(&self, t: usize) -> f64 {
        self.b / ((t + 1) as f64).powf(self.tau2)
    }

    /// Saturation envelope `Γ / (t+1)^τγ`.
    pub fn gamma(&self, t: usize) -> f64 {
        self.gamma_cap / ((t + 1) as f64).powf(self.tau_gamma)
    }

    pub fn a(&self) -> f64 {
        self.a
    }
    pub fn tau1(&self) -> f64 {
        self.tau1
    }
    pub fn b(&self) -> f64 {
        self.b
    }
    pub fn tau2(&self) -> f64 {
        self.tau2
    }
    pub fn gamma_cap(&self) -> f64 {
        self.gamma_cap
    }
    pub fn tau_gamma(&self) -> f64 {
        self.tau_gamma
    }

    /// Same schedule with a different saturation cap `Γ`.
    pub fn with_gamma_cap(&self, gamma_cap: f64) -> Result<Self, EstimatorError> {
        Self::new(self.a, self.tau1, self.b, self.tau2, gamma_cap, self.tau_gamma)
    }
}

/// Guideline schedule for a given base-graph Laplacian: `a = 1`, `τ1 = 0.26`,
/// `b = 1/λ_N(L)`, `τ2 = 0.001`, `τγ = 0.25`; the saturation cap `Γ` is the
/// caller's to choose (it sets the absolute scale the estimator trusts).
pub fn recommended_weights(
    laplacian: &DMatrix<f64>,
    gamma_cap: f64,
) -> Result<WeightSchedule, EstimatorError> {
    let lambda_max = max_laplacian_eigenvalue(laplacian);
    if lambda_max <= CONNECTIVITY_TOL {
        return Err(EstimatorError::DegenerateGraph);
    }
    WeightSchedule::new(1.0, 0.26, 1.0 / lambda_max, 0.001, gamma_cap, 0.25)
}

/// Gain `k = min(1, γ/|innovation|)`, with `k = 1` at zero innovation.
/// Always in `(0, 1]` for finite inputs, and `|k · innovation| <= γ`.
pub fn saturating_gain(innovation: f64, gamma: f64) -> f64 {
    debug_assert!(gamma > 0.0, "saturation envelope must be positive");
    if innovation.abs() <= gamma {
        1.0
    } else {
        gamma / innovation.abs()
    }
}

/// Joint state of all agents at one iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    estimates: Vec<DVector<f64>>,
    averages: Vec<RunningAverage>,
    t: usize,
    saturated_gains: usize,
    total_gains: usize,
}

impl EstimatorState {
    /// Initial state for the model: all estimates zero, empty averages.
    pub fn new(model: &MeasurementModel) -> Self {
        let estimates = vec![DVector::zeros(model.m_dim()); model.n_agents()];
        let averages = (0..model.n_agents())
            .map(|n| RunningAverage::new(model.agent(n).matrix.nrows()))
            .collect();
        Self {
            estimates,
            averages,
            t: 0,
            saturated_gains: 0,
            total_gains: 0,
        }
    }

    /// Iterations applied so far.
    pub fn t(&self) -> usize {
        self.t
    }

    pub fn estimate(&self, n: usize) -> &DVector<f64> {
        &self.estimates[n]
    }

    pub fn estimates(&self) -> &[DVector<f64>] {
        &self.estimates
    }

    pub fn running_average(&self, n: usize) -> &RunningAverage {
        &self.averages[n]
    }

    /// Fraction of gains that saturated (`k < 1`) in the step that produced
    /// this state; zero for the initial state and for the baseline.
    pub fn saturated_fraction(&self) -> f64 {
        if self.total_gains == 0 {
            0.0
        } else {
            self.saturated_gains as f64 / self.total_gains as f64
        }
    }
}

/// One saturating-gain iteration.
pub fn sage_step(
    state: &EstimatorState,
    schedule: &WeightSchedule,
    graph: &Graph,
    measurements: &DVector<f64>,
    model: &MeasurementModel,
) -> Result<EstimatorState, EstimatorError> {
    step(state, schedule, graph, measurements, model, true)
}

/// One unsaturated baseline iteration (`K = I`), same innovations from the
/// same running averages.
pub fn baseline_step(
    state: &EstimatorState,
    schedule: &WeightSchedule,
    graph: &Graph,
    measurements: &DVector<f64>,
    model: &MeasurementModel,
) -> Result<EstimatorState, EstimatorError> {
    step(state, schedule, graph, measurements, model, false)
}

fn step(
    state: &EstimatorState,
    schedule: &WeightSchedule,
    graph: &Graph,
    measurements: &DVector<f64>,
    model: &MeasurementModel,
    saturating: bool,
) -> Result<EstimatorState, EstimatorError> {
    let n_agents = model.n_agents();
    if graph.n_vertices() != n_agents {
        return Err(EstimatorError::AgentCountMismatch {
            graph: graph.n_vertices(),
            model: n_agents,
        });
    }
    if measurements.len() != model.total_streams() {
        return Err(EstimatorError::MeasurementLength {
            expected: model.total_streams(),
            got: measurements.len(),
        });
    }
    if state.estimates.len() != n_agents {
        return Err(EstimatorError::StateShape {
            agent: state.estimates.len().min(n_agents),
        });
    }
    for (n, (x, avg)) in state.estimates.iter().zip(&state.averages).enumerate() {
        if x.len() != model.m_dim() || avg.mean().len() != model.agent(n).matrix.nrows() {
            return Err(EstimatorError::StateShape { agent: n });
        }
    }

    let t = state.t;
    let alpha = schedule.alpha(t);
    let beta = schedule.beta(t);
    let gamma = schedule.gamma(t);

    // measurement absorption happens before the gains are evaluated
    let mut averages = state.averages.clone();
    for (n, avg) in averages.iter_mut().enumerate() {
        let range = model.stream_range(n);
        let y_n = measurements.rows(range.start, range.len()).into_owned();
        avg.update(&y_n).expect("per-agent slice matches average dim");
    }

    let adjacency = graph.adjacency_lists();
    let mut saturated_gains = 0usize;
    let mut total_gains = 0usize;
    let mut estimates = Vec::with_capacity(n_agents);
    for n in 0..n_agents {
        let x_n = &state.estimates[n];
        let mut next = x_n.clone();

        // consensus: unit weight per live link, iteration-t neighbor reads
        for &l in &adjacency[n] {
            let x_l = &state.estimates[l];
            for j in 0..next.len() {
                next[j] -= beta * (x_n[j] - x_l[j]);
            }
        }

        // innovations through the (possibly saturating) gains
        let matrix = &model.agent(n).matrix;
        let ybar = averages[n].mean();
        for r in 0..matrix.nrows() {
            let innovation = ybar[r] - matrix.row_dot(r, x_n);
            let scaled = if saturating {
                let k = saturating_gain(innovation, gamma);
                debug_assert!(k > 0.0 && k <= 1.0, "gain {k} outside (0, 1]");
                total_gains += 1;
                if k < 1.0 {
                    saturated_gains += 1;
                    // k * innovation in exact arithmetic; clamping keeps the
                    // envelope bound exact in floating point too
                    gamma * innovation.signum()
                } else {
                    innovation
                }
            } else {
                innovation
            };
            if saturating {
                debug_assert!(
                    scaled.abs() <= gamma,
                    "saturated innovation {scaled} escaped the envelope {gamma}"
                );
            }
            matrix.row_axpy(r, alpha * scaled, &mut next);
        }
        estimates.push(next);
    }

    Ok(EstimatorState {
        estimates,
        averages,
        t: t + 1,
        saturated_gains,
        total_gains,
    })
}

/// `‖x - (1 ⊗ x̄)‖₂`: the stacked distance of all estimates from their
/// network average. Zero iff all agents agree.
pub fn consensus_residual(state: &EstimatorState) -> f64 {
    let n = state.estimates.len();
    if n == 0 {
        return 0.0;
    }
    let m = state.estimates[0].len();
    let mut mean = DVector::zeros(m);
    for x in &state.estimates {
        mean += x;
    }
    mean /= n as f64;
    state
        .estimates
        .iter()
        .map(|x| (x - &mean).norm_squared())
        .sum::<f64>()
        .sqrt()
}
