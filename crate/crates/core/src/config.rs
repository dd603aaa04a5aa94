//! JSON experiment configuration.
//!
//! A [`SimulationConfig`] is the complete, serializable description of one
//! experiment: network, measurement model, true parameter, attack, weight
//! schedule and Monte-Carlo settings. [`SimulationConfig::resolve`] turns it
//! into the concrete runtime objects, drawing any randomized pieces (graph
//! placement, uniform parameter) from fixed substreams of the master seed so
//! the same file always resolves to the same experiment.
//!
//! External JSON uses 1-based agent and stream indices, matching the
//! edge-list text format; everything internal is 0-based.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attack::{
    random_compromised_set, AttackError, AttackScenario, AttackStrategy,
};
use crate::estimator::{EstimatorError, WeightSchedule};
use crate::graph::{
    laplacian, max_laplacian_eigenvalue, random_geometric, Graph, GraphError, NetworkModel,
    CONNECTIVITY_TOL,
};
use crate::measurement::{
    window_selector, AgentMatrix, MeasurementError, MeasurementModel, Parameter,
};
use crate::rng::{derive_rng, STREAM_PARAMETER};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Measurement(#[from] MeasurementError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// Which estimator(s) a run executes.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorChoice {
    Sage,
    Baseline,
    #[default]
    Both,
}

/// Random geometric graph parameters. `seed` defaults to the master seed;
/// placement always comes from the dedicated placement substream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometricSpec {
    pub n: usize,
    pub radius: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

/// Communication network: exactly one of `geometric` or `edge_list`
/// (1-based text, `"N E"` header), plus an independent per-link failure
/// probability applied at every iteration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometric: Option<GeometricSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub edge_list: Option<String>,
    #[serde(default)]
    pub link_failure_prob: f64,
}

/// Grid window observed by one agent: all cells within Chebyshev distance
/// `half_span` of `position = [x, y]`, clipped to the `grid_w × grid_h`
/// grid. Requires `m_dim == grid_w * grid_h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowSpec {
    pub grid_w: usize,
    pub grid_h: usize,
    pub half_span: usize,
    pub position: [usize; 2],
}

/// Per-stream noise: one deviation for every row, or one per row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NoiseSpec {
    Scalar(f64),
    PerRow(Vec<f64>),
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec::Scalar(1.0)
    }
}

/// One agent (or `copies` identical agents): either explicit matrix rows
/// (normalized on load) or a grid window selector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rows: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub window: Option<WindowSpec>,
    #[serde(default)]
    pub noise_stddev: NoiseSpec,
    #[serde(default = "default_copies")]
    pub copies: usize,
}

fn default_copies() -> usize {
    1
}

/// Measurement side of the experiment. When `snr_db` is present it replaces
/// every noise deviation with the single network-wide value that realizes
/// that signal-to-noise ratio against the resolved parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSpec {
    pub m_dim: usize,
    pub agents: Vec<AgentSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snr_db: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UniformSpec {
    pub low: f64,
    pub high: f64,
}

/// True parameter: explicit values or a uniform draw from the parameter
/// substream of the master seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParameterSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub uniform: Option<UniformSpec>,
}

/// Attack strategy in external form. `fixed_target` carries the decoy
/// parameter; `custom_time_series` maps 1-based stream indices (as JSON
/// object keys) to additive disturbance series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StrategySpec {
    NoAttack,
    ConstantValue { value: f64 },
    ScaledParameter { factor: f64 },
    FixedTarget { target: Vec<f64> },
    CustomTimeSeries { disturbances: BTreeMap<String, Vec<f64>> },
}

/// Attack selection (at most one of the four selectors, all 1-based):
/// explicit agents, explicit streams, or per-trial random draws of agents
/// or streams. No selector means no stream is touched.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compromised_agents: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compromised_streams: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_agents: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random_streams: Option<usize>,
    pub strategy: StrategySpec,
}

/// Consensus gain `b`: explicit, or `"auto"` for the reciprocal of the
/// largest base-graph Laplacian eigenvalue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GainSpec {
    Value(f64),
    Named(String),
}

impl Default for GainSpec {
    fn default() -> Self {
        GainSpec::Named("auto".to_string())
    }
}

/// Weight schedule knobs; everything except the saturation cap `gamma` has
/// the guideline default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSpec {
    #[serde(default = "default_a")]
    pub a: f64,
    #[serde(default = "default_tau1")]
    pub tau1: f64,
    #[serde(default)]
    pub b: GainSpec,
    #[serde(default = "default_tau2")]
    pub tau2: f64,
    pub gamma: f64,
    #[serde(default = "default_tau_gamma")]
    pub tau_gamma: f64,
}

fn default_a() -> f64 {
    1.0
}
fn default_tau1() -> f64 {
    0.26
}
fn default_tau2() -> f64 {
    0.001
}
fn default_tau_gamma() -> f64 {
    0.25
}
fn default_trials() -> usize {
    1
}
fn default_metric_stride() -> usize {
    10
}

/// Complete experiment description; see the crate README for the schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub network: NetworkSpec,
    pub measurement: MeasurementSpec,
    pub parameter: ParameterSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackSpec>,
    pub weights: WeightSpec,
    #[serde(default)]
    pub estimator: EstimatorChoice,
    pub iterations: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    pub seed: u64,
    #[serde(default = "default_metric_stride")]
    pub metric_stride: usize,
}

/// Attack with any per-trial randomness still pending. Fixed scenarios
/// materialize to themselves without consuming randomness, so runs with and
/// without random attacks stay draw-for-draw comparable.
#[derive(Debug, Clone, PartialEq)]
pub enum ResolvedAttack {
    Fixed(AttackScenario),
    RandomStreams { count: usize, strategy: AttackStrategy },
    RandomAgents { count: usize, strategy: AttackStrategy },
}

impl ResolvedAttack {
    /// Concrete scenario for one trial. Random variants draw from `rng`;
    /// `Fixed` draws nothing.
    pub fn materialize<R: Rng + ?Sized>(
        &self,
        model: &MeasurementModel,
        rng: &mut R,
    ) -> Result<AttackScenario, AttackError> {
        match self {
            ResolvedAttack::Fixed(s) => Ok(s.clone()),
            ResolvedAttack::RandomStreams { count, strategy } => {
                let set = random_compromised_set(model.total_streams(), *count, rng)?;
                AttackScenario::new(set, strategy.clone(), model.total_streams())
            }
            ResolvedAttack::RandomAgents { count, strategy } => {
                let picks = rand::seq::index::sample(rng, model.n_agents(), *count);
                let mut set = BTreeSet::new();
                for n in picks {
                    set.extend(model.stream_range(n));
                }
                AttackScenario::new(set, strategy.clone(), model.total_streams())
            }
        }
    }

    pub fn strategy(&self) -> &AttackStrategy {
        match self {
            ResolvedAttack::Fixed(s) => s.strategy(),
            ResolvedAttack::RandomStreams { strategy, .. } => strategy,
            ResolvedAttack::RandomAgents { strategy, .. } => strategy,
        }
    }

    /// Compromised-set size (streams for fixed/random-stream modes, agents
    /// for random-agent mode).
    pub fn count(&self) -> usize {
        match self {
            ResolvedAttack::Fixed(s) => s.compromised().len(),
            ResolvedAttack::RandomStreams { count, .. } => *count,
            ResolvedAttack::RandomAgents { count, .. } => *count,
        }
    }
}

/// Runtime objects for one experiment, ready for the Monte-Carlo harness.
#[derive(Debug, Clone)]
pub struct ResolvedExperiment {
    pub network: NetworkModel,
    pub model: MeasurementModel,
    pub theta: Parameter,
    pub attack: ResolvedAttack,
    pub weights: WeightSchedule,
    pub estimator: EstimatorChoice,
    pub iterations: usize,
    pub trials: usize,
    pub seed: u64,
    pub metric_stride: usize,
}

impl SimulationConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Builds the runtime experiment, validating every cross-field
    /// constraint. Deterministic in the config contents.
    pub fn resolve(&self) -> Result<ResolvedExperiment, ConfigError> {
        if self.iterations == 0 {
            return Err(invalid("iterations must be at least 1"));
        }
        if self.trials == 0 {
            return Err(invalid("trials must be at least 1"));
        }
        if self.metric_stride == 0 {
            return Err(invalid("metric_stride must be at least 1"));
        }
        let m_dim = self.measurement.m_dim;
        if m_dim == 0 {
            return Err(invalid("m_dim must be at least 1"));
        }

        let graph = self.resolve_graph()?;
        if !graph.is_connected() {
            return Err(invalid(
                "base communication graph is disconnected; consensus cannot mix information",
            ));
        }
        let network = NetworkModel::new(graph, self.network.link_failure_prob)?;

        let theta = self.resolve_parameter()?;
        let model = self.resolve_model(&theta)?;
        if model.n_agents() != network.base().n_vertices() {
            return Err(invalid(format!(
                "graph has {} vertices but the measurement model defines {} agents",
                network.base().n_vertices(),
                model.n_agents()
            )));
        }

        let weights = self.resolve_weights(&network)?;
        let attack = resolve_attack_spec(self.attack.as_ref(), &model)?;

        Ok(ResolvedExperiment {
            network,
            model,
            theta,
            attack,
            weights,
            estimator: self.estimator,
            iterations: self.iterations,
            trials: self.trials,
            seed: self.seed,
            metric_stride: self.metric_stride,
        })
    }

    fn resolve_graph(&self) -> Result<Graph, ConfigError> {
        match (&self.network.geometric, &self.network.edge_list) {
            (Some(_), Some(_)) => Err(invalid(
                "network needs exactly one of `geometric` or `edge_list`, got both",
            )),
            (None, None) => Err(invalid(
                "network needs exactly one of `geometric` or `edge_list`, got neither",
            )),
            (Some(g), None) => {
                if g.n < 2 {
                    return Err(invalid("geometric graph needs at least 2 vertices"));
                }
                if !(g.radius.is_finite() && g.radius > 0.0) {
                    return Err(invalid("geometric radius must be positive and finite"));
                }
                Ok(random_geometric(g.n, g.radius, g.seed.unwrap_or(self.seed)))
            }
            (None, Some(text)) => Ok(Graph::from_edge_list_text(text)?),
        }
    }

    fn resolve_parameter(&self) -> Result<Parameter, ConfigError> {
        let m_dim = self.measurement.m_dim;
        match (&self.parameter.values, &self.parameter.uniform) {
            (Some(_), Some(_)) => Err(invalid(
                "parameter needs exactly one of `values` or `uniform`, got both",
            )),
            (None, None) => Err(invalid(
                "parameter needs exactly one of `values` or `uniform`, got neither",
            )),
            (Some(values), None) => {
                if values.len() != m_dim {
                    return Err(invalid(format!(
                        "parameter has {} values but m_dim is {m_dim}",
                        values.len()
                    )));
                }
                Ok(Parameter::from_slice(values)?)
            }
            (None, Some(u)) => {
                if !(u.low.is_finite() && u.high.is_finite() && u.low < u.high) {
                    return Err(invalid("uniform parameter range needs finite low < high"));
                }
                let dist = rand::distr::Uniform::new(u.low, u.high)
                    .map_err(|e| invalid(format!("uniform parameter range: {e}")))?;
                let mut rng = derive_rng(self.seed, STREAM_PARAMETER);
                let values: Vec<f64> = (0..m_dim).map(|_| rng.sample(dist)).collect();
                Ok(Parameter::from_slice(&values)?)
            }
        }
    }

    fn resolve_model(&self, theta: &Parameter) -> Result<MeasurementModel, ConfigError> {
        let model = build_measurement_model(&self.measurement)?;
        match self.measurement.snr_db {
            None => Ok(model),
            Some(snr) => {
                if !snr.is_finite() {
                    return Err(invalid("snr_db must be finite"));
                }
                let stddev = model.stddev_for_snr_db(theta, snr)?;
                Ok(model.with_uniform_noise(stddev)?)
            }
        }
    }

    fn resolve_weights(&self, network: &NetworkModel) -> Result<WeightSchedule, ConfigError> {
        let w = &self.weights;
        let b = match &w.b {
            GainSpec::Value(v) => *v,
            GainSpec::Named(s) if s == "auto" => {
                let lambda_max = max_laplacian_eigenvalue(&laplacian(network.base()));
                if lambda_max <= CONNECTIVITY_TOL {
                    return Err(invalid("cannot auto-scale b on an edgeless graph"));
                }
                1.0 / lambda_max
            }
            GainSpec::Named(s) => {
                return Err(invalid(format!(
                    "weights.b must be a number or \"auto\", got \"{s}\""
                )));
            }
        };
        Ok(WeightSchedule::new(
            w.a,
            w.tau1,
            b,
            w.tau2,
            w.gamma,
            w.tau_gamma,
        )?)
    }

}

/// Builds the measurement model from its spec alone. `snr_db` is resolved
/// against the true parameter during full experiment resolution and is
/// ignored here (stream noise never enters the Grammian analysis).
pub fn build_measurement_model(
    measurement: &MeasurementSpec,
) -> Result<MeasurementModel, ConfigError> {
    let m_dim = measurement.m_dim;
    if m_dim == 0 {
        return Err(invalid("m_dim must be at least 1"));
    }
    if measurement.agents.is_empty() {
        return Err(invalid("measurement needs at least one agent"));
    }
    let mut raw = Vec::new();
    for (i, spec) in measurement.agents.iter().enumerate() {
        if spec.copies == 0 {
            return Err(invalid(format!("agent spec {i}: copies must be at least 1")));
        }
        let matrix = match (&spec.rows, &spec.window) {
            (Some(_), Some(_)) | (None, None) => {
                return Err(invalid(format!(
                    "agent spec {i} needs exactly one of `rows` or `window`"
                )));
            }
            (Some(rows), None) => {
                if rows.is_empty() {
                    return Err(invalid(format!("agent spec {i}: rows must be non-empty")));
                }
                if rows.iter().any(|r| r.len() != m_dim) {
                    return Err(invalid(format!(
                        "agent spec {i}: every row must have m_dim = {m_dim} entries"
                    )));
                }
                let flat: Vec<f64> = rows.iter().flatten().copied().collect();
                AgentMatrix::Dense(DMatrix::from_row_slice(rows.len(), m_dim, &flat))
            }
            (None, Some(w)) => {
                if w.grid_w * w.grid_h != m_dim {
                    return Err(invalid(format!(
                        "agent spec {i}: window grid {}x{} does not match m_dim = {m_dim}",
                        w.grid_w, w.grid_h
                    )));
                }
                let [x, y] = w.position;
                if x >= w.grid_w || y >= w.grid_h {
                    return Err(invalid(format!(
                        "agent spec {i}: window position ({x}, {y}) is off the grid"
                    )));
                }
                AgentMatrix::Selector {
                    m_dim,
                    cols: window_selector(w.grid_w, w.grid_h, w.half_span, x, y),
                }
            }
        };
        let noise = match &spec.noise_stddev {
            NoiseSpec::Scalar(s) => vec![*s; matrix.nrows()],
            NoiseSpec::PerRow(v) => v.clone(),
        };
        for _ in 0..spec.copies {
            raw.push((matrix.clone(), noise.clone()));
        }
    }
    Ok(MeasurementModel::new(m_dim, raw)?)
}

/// Resolves an attack spec against a built model; `None` means no stream is
/// touched. External indices are 1-based.
pub fn resolve_attack_spec(
    attack: Option<&AttackSpec>,
    model: &MeasurementModel,
) -> Result<ResolvedAttack, ConfigError> {
    let total = model.total_streams();
    let spec = match attack {
        None => {
            return Ok(ResolvedAttack::Fixed(AttackScenario::new(
                BTreeSet::new(),
                AttackStrategy::NoAttack,
                total,
            )?));
        }
        Some(spec) => spec,
    };
    let strategy = resolve_strategy(&spec.strategy, model.m_dim(), total)?;

    let selectors = [
        spec.compromised_agents.is_some(),
        spec.compromised_streams.is_some(),
        spec.random_agents.is_some(),
        spec.random_streams.is_some(),
    ]
    .iter()
    .filter(|&&s| s)
    .count();
    if selectors > 1 {
        return Err(invalid(
            "attack needs at most one of compromised_agents, compromised_streams, \
             random_agents, random_streams",
        ));
    }

    if let Some(agents) = &spec.compromised_agents {
        let mut set = BTreeSet::new();
        for &a in agents {
            if a == 0 || a > model.n_agents() {
                return Err(invalid(format!(
                    "compromised agent {a} out of range 1..={}",
                    model.n_agents()
                )));
            }
            set.extend(model.stream_range(a - 1));
        }
        return Ok(ResolvedAttack::Fixed(AttackScenario::new(
            set, strategy, total,
        )?));
    }
    if let Some(streams) = &spec.compromised_streams {
        let mut set = BTreeSet::new();
        for &p in streams {
            if p == 0 || p > total {
                return Err(invalid(format!(
                    "compromised stream {p} out of range 1..={total}"
                )));
            }
            set.insert(p - 1);
        }
        return Ok(ResolvedAttack::Fixed(AttackScenario::new(
            set, strategy, total,
        )?));
    }
    if let Some(count) = spec.random_agents {
        if count >= model.n_agents() {
            return Err(invalid(format!(
                "random_agents = {count} would compromise every agent (have {})",
                model.n_agents()
            )));
        }
        return Ok(ResolvedAttack::RandomAgents { count, strategy });
    }
    if let Some(count) = spec.random_streams {
        if count >= total {
            return Err(invalid(format!(
                "random_streams = {count} would compromise every stream (have {total})"
            )));
        }
        return Ok(ResolvedAttack::RandomStreams { count, strategy });
    }
    Ok(ResolvedAttack::Fixed(AttackScenario::new(
        BTreeSet::new(),
        strategy,
        total,
    )?))
}

fn resolve_strategy(
    spec: &StrategySpec,
    m_dim: usize,
    total_streams: usize,
) -> Result<AttackStrategy, ConfigError> {
    match spec {
        StrategySpec::NoAttack => Ok(AttackStrategy::NoAttack),
        StrategySpec::ConstantValue { value } => {
            if !value.is_finite() {
                return Err(invalid("constant_value attack value must be finite"));
            }
            Ok(AttackStrategy::ConstantValue { value: *value })
        }
        StrategySpec::ScaledParameter { factor } => {
            if !factor.is_finite() {
                return Err(invalid("scaled_parameter attack factor must be finite"));
            }
            Ok(AttackStrategy::ScaledParameter { factor: *factor })
        }
        StrategySpec::FixedTarget { target } => {
            if target.len() != m_dim {
                return Err(invalid(format!(
                    "fixed_target has {} entries but m_dim is {m_dim}",
                    target.len()
                )));
            }
            Ok(AttackStrategy::FixedTarget {
                target: Parameter::from_slice(target)?,
            })
        }
        StrategySpec::CustomTimeSeries { disturbances } => {
            let mut map = BTreeMap::new();
            for (key, series) in disturbances {
                let p: usize = key.parse().map_err(|_| {
                    invalid(format!("custom_time_series stream key \"{key}\" is not an integer"))
                })?;
                if p == 0 || p > total_streams {
                    return Err(invalid(format!(
                        "custom_time_series stream {p} out of range 1..={total_streams}"
                    )));
                }
                if series.iter().any(|v| !v.is_finite()) {
                    return Err(invalid(format!(
                        "custom_time_series for stream {p} has a non-finite entry"
                    )));
                }
                map.insert(p - 1, series.clone());
            }
            Ok(AttackStrategy::CustomTimeSeries { disturbances: map })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    /// Path graph on 3 vertices, one selector stream per agent, every piece
    /// explicit.
    fn full_example() -> String
    {
        r#"{
            "network": {"edge_list": "3 2\n1 2\n2 3\n", "link_failure_prob": 0.25},
            "measurement": {
                "m_dim": 2,
                "agents": [
                    {"rows": [[1.0, 0.0]], "noise_stddev": 0.5},
                    {"rows": [[0.0, 1.0]], "noise_stddev": [0.5]},
                    {"rows": [[3.0, 4.0]], "noise_stddev": 1.0}
                ]
            },
            "parameter": {"values": [2.0, -1.0]},
            "attack": {
                "compromised_streams": [3],
                "strategy": {"kind": "constant_value", "value": 100.0}
            },
            "weights": {"gamma": 5.0},
            "estimator": "both",
            "iterations": 50,
            "trials": 2,
            "seed": 9
        }"#
        .to_string()
    }

    #[test]
    fn full_example_resolves() {
        let cfg = SimulationConfig::from_json(&full_example()).unwrap();
        let resolved = cfg.resolve().unwrap();
        assert_eq!(resolved.network.base().n_vertices(), 3);
        assert_relative_eq!(resolved.network.link_failure_prob(), 0.25);
        assert_eq!(resolved.model.n_agents(), 3);
        assert_eq!(resolved.model.total_streams(), 3);
        assert_eq!(resolved.theta.as_vector().as_slice(), &[2.0, -1.0]);
        // path-3 Laplacian spectrum is {0, 1, 3}: auto b = 1/3
        assert_relative_eq!(resolved.weights.b(), 1.0 / 3.0, epsilon = 1e-12);
        assert_relative_eq!(resolved.weights.gamma_cap(), 5.0);
        // stream 3 external is stream 2 internal
        match &resolved.attack {
            ResolvedAttack::Fixed(s) => {
                assert_eq!(s.compromised().iter().copied().collect::<Vec<_>>(), vec![2]);
            }
            other => panic!("expected fixed attack, got {other:?}"),
        }
        assert_eq!(resolved.estimator, EstimatorChoice::Both);
        assert_eq!(resolved.trials, 2);
        assert_eq!(resolved.metric_stride, 10);
    }

    #[test]
    fn json_round_trips_through_serde() {
        let cfg = SimulationConfig::from_json(&full_example()).unwrap();
        let text = cfg.to_json_pretty();
        let again = SimulationConfig::from_json(&text).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = SimulationConfig::from_json(
            r#"{
                "network": {"edge_list": "2 1\n1 2\n"},
                "measurement": {"m_dim": 1, "agents": [{"rows": [[1.0]], "copies": 2}]},
                "parameter": {"values": [3.0]},
                "weights": {"gamma": 2.0},
                "iterations": 10,
                "seed": 1
            }"#,
        )
        .unwrap();
        let resolved = cfg.resolve().unwrap();
        assert_eq!(resolved.trials, 1);
        assert_eq!(resolved.metric_stride, 10);
        assert_eq!(resolved.estimator, EstimatorChoice::Both);
        assert_relative_eq!(resolved.weights.a(), 1.0);
        assert_relative_eq!(resolved.weights.tau1(), 0.26);
        // K2 Laplacian spectrum {0, 2}: auto b = 1/2
        assert_relative_eq!(resolved.weights.b(), 0.5, epsilon = 1e-12);
        assert_relative_eq!(resolved.weights.tau2(), 0.001);
        assert_relative_eq!(resolved.weights.tau_gamma(), 0.25);
        // no attack section: empty fixed set
        match &resolved.attack {
            ResolvedAttack::Fixed(s) => assert!(s.compromised().is_empty()),
            other => panic!("expected fixed no-attack, got {other:?}"),
        }
        // copies expanded both agents
        assert_eq!(resolved.model.n_agents(), 2);
        // default noise is 1.0 on every stream
        assert_relative_eq!(resolved.model.stream_noise(0), 1.0);
    }

    fn base_value() -> serde_json::Value {
        serde_json::from_str(&full_example()).unwrap()
    }

    fn resolve_patched(patch: impl FnOnce(&mut serde_json::Value)) -> Result<ResolvedExperiment, ConfigError> {
        let mut v = base_value();
        patch(&mut v);
        SimulationConfig::from_json(&v.to_string())?.resolve()
    }

    #[test]
    fn network_needs_exactly_one_source() {
        let err = resolve_patched(|v| {
            v["network"]["geometric"] = serde_json::json!({"n": 3, "radius": 0.8});
        })
        .unwrap_err();
        assert!(err.to_string().contains("got both"), "{err}");

        let err = resolve_patched(|v| {
            v["network"]
                .as_object_mut()
                .unwrap()
                .remove("edge_list");
        })
        .unwrap_err();
        assert!(err.to_string().contains("got neither"), "{err}");
    }

    #[test]
    fn disconnected_base_graph_is_rejected() {
        let err = resolve_patched(|v| {
            v["network"]["edge_list"] = serde_json::json!("3 1\n1 2\n");
        })
        .unwrap_err();
        assert!(err.to_string().contains("disconnected"), "{err}");
    }

    #[test]
    fn parameter_needs_exactly_one_source() {
        let err = resolve_patched(|v| {
            v["parameter"]["uniform"] = serde_json::json!({"low": 0.0, "high": 1.0});
        })
        .unwrap_err();
        assert!(err.to_string().contains("got both"), "{err}");
    }

    #[test]
    fn uniform_parameter_is_deterministic_and_in_range() {
        let make = |seed: u64| {
            resolve_patched(|v| {
                v["parameter"] = serde_json::json!({"uniform": {"low": -4.0, "high": 4.0}});
                v["seed"] = serde_json::json!(seed);
            })
            .unwrap()
            .theta
        };
        let a = make(9);
        let b = make(9);
        assert_eq!(a.as_vector(), b.as_vector());
        assert_ne!(make(10).as_vector(), a.as_vector());
        for &x in a.as_vector().iter() {
            assert!((-4.0..4.0).contains(&x));
        }
    }

    #[test]
    fn one_based_stream_indices() {
        // stream 0 does not exist externally
        let err = resolve_patched(|v| {
            v["attack"]["compromised_streams"] = serde_json::json!([0]);
        })
        .unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
        // past the end
        let err = resolve_patched(|v| {
            v["attack"]["compromised_streams"] = serde_json::json!([4]);
        })
        .unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
    }

    #[test]
    fn compromised_agents_expand_to_their_streams() {
        let resolved = resolve_patched(|v| {
            let attack = v["attack"].as_object_mut().unwrap();
            attack.remove("compromised_streams");
            attack.insert("compromised_agents".into(), serde_json::json!([2, 3]));
        })
        .unwrap();
        match &resolved.attack {
            ResolvedAttack::Fixed(s) => {
                assert_eq!(s.compromised().iter().copied().collect::<Vec<_>>(), vec![1, 2]);
            }
            other => panic!("expected fixed attack, got {other:?}"),
        }
    }

    #[test]
    fn at_most_one_attack_selector() {
        let err = resolve_patched(|v| {
            v["attack"]["random_streams"] = serde_json::json!(1);
        })
        .unwrap_err();
        assert!(err.to_string().contains("at most one"), "{err}");
    }

    #[test]
    fn random_selectors_resolve_and_materialize() {
        let resolved = resolve_patched(|v| {
            let attack = v["attack"].as_object_mut().unwrap();
            attack.remove("compromised_streams");
            attack.insert("random_streams".into(), serde_json::json!(2));
        })
        .unwrap();
        let mut rng = crate::rng::derive_rng(5, 0);
        let scenario = resolved.attack.materialize(&resolved.model, &mut rng).unwrap();
        assert_eq!(scenario.compromised().len(), 2);
        assert!(scenario.compromised().iter().all(|&p| p < 3));

        let resolved = resolve_patched(|v| {
            let attack = v["attack"].as_object_mut().unwrap();
            attack.remove("compromised_streams");
            attack.insert("random_agents".into(), serde_json::json!(1));
        })
        .unwrap();
        let scenario = resolved.attack.materialize(&resolved.model, &mut rng).unwrap();
        assert_eq!(scenario.compromised().len(), 1);
    }

    #[test]
    fn random_selectors_must_leave_something_clean() {
        let err = resolve_patched(|v| {
            let attack = v["attack"].as_object_mut().unwrap();
            attack.remove("compromised_streams");
            attack.insert("random_streams".into(), serde_json::json!(3));
        })
        .unwrap_err();
        assert!(err.to_string().contains("every stream"), "{err}");

        let err = resolve_patched(|v| {
            let attack = v["attack"].as_object_mut().unwrap();
            attack.remove("compromised_streams");
            attack.insert("random_agents".into(), serde_json::json!(3));
        })
        .unwrap_err();
        assert!(err.to_string().contains("every agent"), "{err}");
    }

    #[test]
    fn snr_overrides_noise() {
        let resolved = resolve_patched(|v| {
            v["measurement"]["snr_db"] = serde_json::json!(13.0);
        })
        .unwrap();
        let expected = resolved
            .model
            .stddev_for_snr_db(&resolved.theta, 13.0)
            .unwrap();
        for p in 0..resolved.model.total_streams() {
            assert_relative_eq!(resolved.model.stream_noise(p), expected, epsilon = 1e-12);
        }
        // all three streams share the value even though the file set
        // different per-agent deviations
        assert_relative_eq!(
            resolved.model.stream_noise(0),
            resolved.model.stream_noise(2),
            epsilon = 1e-12
        );
    }

    #[test]
    fn window_agents_become_selectors() {
        let cfg = SimulationConfig::from_json(
            r#"{
                "network": {"edge_list": "2 1\n1 2\n"},
                "measurement": {
                    "m_dim": 9,
                    "agents": [{
                        "window": {"grid_w": 3, "grid_h": 3, "half_span": 1, "position": [0, 0]},
                        "copies": 2
                    }]
                },
                "parameter": {"values": [0,0,0,0,0,0,0,0,1]},
                "weights": {"gamma": 2.0},
                "iterations": 5,
                "seed": 3
            }"#,
        )
        .unwrap();
        let resolved = cfg.resolve().unwrap();
        assert_eq!(resolved.model.n_agents(), 2);
        for n in 0..2 {
            match &resolved.model.agent(n).matrix {
                AgentMatrix::Selector { cols, .. } => assert_eq!(cols, &vec![0, 1, 3, 4]),
                other => panic!("expected selector, got {other:?}"),
            }
        }
    }

    #[test]
    fn window_must_match_m_dim_and_grid() {
        let err = resolve_patched(|v| {
            v["measurement"]["agents"][0] = serde_json::json!({
                "window": {"grid_w": 3, "grid_h": 3, "half_span": 1, "position": [0, 0]}
            });
        })
        .unwrap_err();
        assert!(err.to_string().contains("does not match m_dim"), "{err}");
    }

    #[test]
    fn explicit_b_is_honored() {
        let resolved = resolve_patched(|v| {
            v["weights"]["b"] = serde_json::json!(0.4);
        })
        .unwrap();
        assert_relative_eq!(resolved.weights.b(), 0.4);
        let err = resolve_patched(|v| {
            v["weights"]["b"] = serde_json::json!("fast");
        })
        .unwrap_err();
        assert!(err.to_string().contains("\"auto\""), "{err}");
    }

    #[test]
    fn estimator_choice_parses() {
        let resolved = resolve_patched(|v| {
            v["estimator"] = serde_json::json!("sage");
        })
        .unwrap();
        assert_eq!(resolved.estimator, EstimatorChoice::Sage);
        let resolved = resolve_patched(|v| {
            v["estimator"] = serde_json::json!("baseline");
        })
        .unwrap();
        assert_eq!(resolved.estimator, EstimatorChoice::Baseline);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = resolve_patched(|v| {
            v["gamma_boost"] = serde_json::json!(4);
        })
        .unwrap_err();
        assert!(matches!(err, ConfigError::Json(_)), "{err}");
    }

    #[test]
    fn fixed_target_length_is_checked() {
        let err = resolve_patched(|v| {
            v["attack"]["strategy"] =
                serde_json::json!({"kind": "fixed_target", "target": [1.0, 2.0, 3.0]});
        })
        .unwrap_err();
        assert!(err.to_string().contains("m_dim"), "{err}");
    }

    #[test]
    fn custom_series_keys_are_one_based() {
        let resolved = resolve_patched(|v| {
            v["attack"]["strategy"] = serde_json::json!({
                "kind": "custom_time_series",
                "disturbances": {"2": [1.0, 2.0]}
            });
        })
        .unwrap();
        match resolved.attack.strategy() {
            AttackStrategy::CustomTimeSeries { disturbances } => {
                assert!(disturbances.contains_key(&1));
            }
            other => panic!("expected custom series, got {other:?}"),
        }
        let err = resolve_patched(|v| {
            v["attack"]["strategy"] = serde_json::json!({
                "kind": "custom_time_series",
                "disturbances": {"0": [1.0]}
            });
        })
        .unwrap_err();
        assert!(err.to_string().contains("out of range"), "{err}");
    }

    #[test]
    fn geometric_seed_falls_back_to_master() {
        let cfg = |seed: Option<u64>| {
            let mut v = base_value();
            let mut geo = serde_json::json!({"n": 12, "radius": 0.9});
            if let Some(s) = seed {
                geo["seed"] = serde_json::json!(s);
            }
            v["network"] = serde_json::json!({"geometric": geo});
            v["measurement"] = serde_json::json!({
                "m_dim": 1,
                "agents": [{"rows": [[1.0]], "copies": 12}]
            });
            v["parameter"] = serde_json::json!({"values": [1.0]});
            SimulationConfig::from_json(&v.to_string()).unwrap()
        };
        // master seed 9: explicit geometric seed 9 must give the same graph
        let implicit = cfg(None).resolve().unwrap();
        let explicit = cfg(Some(9)).resolve().unwrap();
        assert_eq!(implicit.network.base().edges(), explicit.network.base().edges());
        let other = cfg(Some(10)).resolve().unwrap();
        assert_ne!(other.network.base().edges(), implicit.network.base().edges());
    }

    #[test]
    fn zero_iterations_trials_or_stride_rejected() {
        for field in ["iterations", "trials", "metric_stride"] {
            let err = resolve_patched(|v| {
                v[field] = serde_json::json!(0);
            })
            .unwrap_err();
            assert!(err.to_string().contains("at least 1"), "{field}: {err}");
        }
    }
}
