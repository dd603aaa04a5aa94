//! Heterogeneous linear measurement models.
//!
//! Agent `n` observes `y_n(t) = H_n θ* + w_n(t)` where `H_n` is a `P_n × M`
//! matrix with unit-norm rows and `w_n` is zero-mean Gaussian noise,
//! independent across streams and iterations. Rows of raw models are
//! normalized once at construction; the per-stream noise deviations are
//! scaled by the same diagonal so the normalized model describes the same
//! physical measurement.
//!
//! The global stream index stacks agents in order: agent `n` owns the
//! half-open range starting at `P_0 + … + P_{n-1}`. External formats write
//! stream and agent indices 1-based; everything in code is 0-based.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use std::ops::Range;

/// Row norms below this are rejected as zero rows.
pub const ZERO_ROW_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MeasurementError {
    #[error("row {row} of agent {agent} has norm below {ZERO_ROW_TOL}")]
    ZeroRow { agent: usize, row: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("agent {agent}: {got} noise deviations for {rows} rows")]
    NoiseCountMismatch { agent: usize, rows: usize, got: usize },
    #[error("noise stddev must be finite and nonnegative, got {0}")]
    InvalidNoise(f64),
    #[error("agent {agent} row {row}: column {column} out of range for dimension {m_dim}")]
    SelectorOutOfRange {
        agent: usize,
        row: usize,
        column: usize,
        m_dim: usize,
    },
    #[error("parameter entries must be finite")]
    NonFiniteParameter,
    #[error("model has no agents")]
    Empty,
}

/// True parameter being estimated; entries are finite reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter(DVector<f64>);

impl Parameter {
    pub fn new(value: DVector<f64>) -> Result<Self, MeasurementError> {
        if value.iter().any(|x| !x.is_finite()) {
            return Err(MeasurementError::NonFiniteParameter);
        }
        Ok(Self(value))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self, MeasurementError> {
        Self::new(DVector::from_row_slice(values))
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_vector(&self) -> &DVector<f64> {
        &self.0
    }
}

/// One agent's measurement matrix. `Dense` holds arbitrary unit-norm rows;
/// `Selector` is the canonical-basis special case (row `r` is `e_{cols[r]}`),
/// stored as indices so grid models with many pixels stay compact.
#[derive(Debug, Clone, PartialEq)]
pub enum AgentMatrix {
    Dense(DMatrix<f64>),
    Selector { m_dim: usize, cols: Vec<usize> },
}

impl AgentMatrix {
    pub fn nrows(&self) -> usize {
        match self {
            AgentMatrix::Dense(m) => m.nrows(),
            AgentMatrix::Selector { cols, .. } => cols.len(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            AgentMatrix::Dense(m) => m.ncols(),
            AgentMatrix::Selector { m_dim, .. } => *m_dim,
        }
    }

    /// `h_r · x` for local row `r`.
    pub fn row_dot(&self, r: usize, x: &DVector<f64>) -> f64 {
        match self {
            AgentMatrix::Dense(m) => m.row(r).transpose().dot(x),
            AgentMatrix::Selector { cols, .. } => x[cols[r]],
        }
    }

    /// `out += scale * h_r` for local row `r`.
    pub fn row_axpy(&self, r: usize, scale: f64, out: &mut DVector<f64>) {
        match self {
            AgentMatrix::Dense(m) => {
                for (j, h) in m.row(r).iter().enumerate() {
                    out[j] += scale * h;
                }
            }
            AgentMatrix::Selector { cols, .. } => out[cols[r]] += scale,
        }
    }

    /// Row as a dense vector; the compact form for analysis code that needs
    /// explicit coordinates.
    pub fn row_dense(&self, r: usize) -> DVector<f64> {
        match self {
            AgentMatrix::Dense(m) => m.row(r).transpose(),
            AgentMatrix::Selector { m_dim, cols } => {
                let mut v = DVector::zeros(*m_dim);
                v[cols[r]] = 1.0;
                v
            }
        }
    }
}

/// One agent: unit-row matrix plus per-stream noise standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentModel {
    pub matrix: AgentMatrix,
    pub noise_stddevs: Vec<f64>,
}

/// Network measurement model over a shared `M`-dimensional parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementModel {
    m_dim: usize,
    agents: Vec<AgentModel>,
    stream_offsets: Vec<usize>,
}

impl MeasurementModel {
    /// Builds a model from raw (not yet normalized) agent matrices. Dense
    /// rows are scaled to unit norm and the matching noise deviation is
    /// scaled by the same factor; selector rows are unit already.
    pub fn new(
        m_dim: usize,
        raw_agents: Vec<(AgentMatrix, Vec<f64>)>,
    ) -> Result<Self, MeasurementError> {
        if raw_agents.is_empty() {
            return Err(MeasurementError::Empty);
        }
        let mut agents = Vec::with_capacity(raw_agents.len());
        for (agent_idx, (matrix, noise)) in raw_agents.into_iter().enumerate() {
            if matrix.ncols() != m_dim {
                return Err(MeasurementError::DimensionMismatch {
                    expected: m_dim,
                    got: matrix.ncols(),
                });
            }
            if noise.len() != matrix.nrows() {
                return Err(MeasurementError::NoiseCountMismatch {
                    agent: agent_idx,
                    rows: matrix.nrows(),
                    got: noise.len(),
                });
            }
            if let Some(&bad) = noise.iter().find(|s| !s.is_finite() || **s < 0.0) {
                return Err(MeasurementError::InvalidNoise(bad));
            }
            let agent = match matrix {
                AgentMatrix::Dense(raw) => {
                    let (normalized, scales) = normalize_rows(&raw).map_err(|e| match e {
                        MeasurementError::ZeroRow { row, .. } => MeasurementError::ZeroRow {
                            agent: agent_idx,
                            row,
                        },
                        other => other,
                    })?;
                    let noise_stddevs = noise
                        .iter()
                        .zip(scales.iter())
                        .map(|(s, d)| s * d)
                        .collect();
                    AgentModel {
                        matrix: AgentMatrix::Dense(normalized),
                        noise_stddevs,
                    }
                }
                AgentMatrix::Selector { m_dim: md, cols } => {
                    for (row, &c) in cols.iter().enumerate() {
                        if c >= md {
                            return Err(MeasurementError::SelectorOutOfRange {
                                agent: agent_idx,
                                row,
                                column: c,
                                m_dim: md,
                            });
                        }
                    }
                    AgentModel {
                        matrix: AgentMatrix::Selector { m_dim: md, cols },
                        noise_stddevs: noise,
                    }
                }
            };
            agents.push(agent);
        }
        let mut stream_offsets = Vec::with_capacity(agents.len() + 1);
        let mut acc = 0;
        for a in &agents {
            stream_offsets.push(acc);
            acc += a.matrix.nrows();
        }
        stream_offsets.push(acc);
        Ok(Self {
            m_dim,
            agents,
            stream_offsets,
        })
    }

    pub fn m_dim(&self) -> usize {
        self.m_dim
    }

    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn agent(&self, n: usize) -> &AgentModel {
        &self.agents[n]
    }

    pub fn agents(&self) -> &[AgentModel] {
        &self.agents
    }

    /// Total stream count `P`.
    pub fn total_streams(&self) -> usize {
        *self.stream_offsets.last().expect("offsets are non-empty")
    }

    /// Global stream range owned by agent `n`.
    pub fn stream_range(&self, n: usize) -> Range<usize> {
        self.stream_offsets[n]..self.stream_offsets[n + 1]
    }

    /// Global-stream ranges for all agents; consecutive and disjoint, and
    /// together they partition `0..P`.
    pub fn stream_index_map(&self) -> Vec<Range<usize>> {
        (0..self.agents.len()).map(|n| self.stream_range(n)).collect()
    }

    /// `(agent, local row)` owning global stream `p`.
    pub fn locate_stream(&self, p: usize) -> (usize, usize) {
        assert!(p < self.total_streams(), "stream {p} out of range");
        let agent = match self.stream_offsets.binary_search(&p) {
            Ok(i) if i + 1 == self.stream_offsets.len() => i - 1,
            Ok(i) => i,
            Err(i) => i - 1,
        };
        (agent, p - self.stream_offsets[agent])
    }

    /// Dense row of global stream `p`.
    pub fn stream_row(&self, p: usize) -> DVector<f64> {
        let (agent, r) = self.locate_stream(p);
        self.agents[agent].matrix.row_dense(r)
    }

    /// `h_p · x` for global stream `p`.
    pub fn stream_dot(&self, p: usize, x: &DVector<f64>) -> f64 {
        let (agent, r) = self.locate_stream(p);
        self.agents[agent].matrix.row_dot(r, x)
    }

    /// Noise standard deviation of global stream `p`.
    pub fn stream_noise(&self, p: usize) -> f64 {
        let (agent, r) = self.locate_stream(p);
        self.agents[agent].noise_stddevs[r]
    }

    /// One noisy observation `H_n θ + w` for agent `n`; one standard-normal
    /// draw per stream in row order.
    pub fn clean_measurement<R: Rng + ?Sized>(
        &self,
        n: usize,
        theta: &Parameter,
        rng: &mut R,
    ) -> Result<DVector<f64>, MeasurementError> {
        self.check_theta(theta)?;
        let a = &self.agents[n];
        let mut y = DVector::zeros(a.matrix.nrows());
        for r in 0..a.matrix.nrows() {
            let w: f64 = StandardNormal.sample(rng);
            y[r] = a.matrix.row_dot(r, theta.as_vector()) + a.noise_stddevs[r] * w;
        }
        Ok(y)
    }

    /// Stacked clean measurement for the whole network, agents in order.
    pub fn clean_measurement_stacked<R: Rng + ?Sized>(
        &self,
        theta: &Parameter,
        rng: &mut R,
    ) -> Result<DVector<f64>, MeasurementError> {
        self.check_theta(theta)?;
        let mut y = DVector::zeros(self.total_streams());
        for (n, a) in self.agents.iter().enumerate() {
            let base = self.stream_offsets[n];
            for r in 0..a.matrix.nrows() {
                let w: f64 = StandardNormal.sample(rng);
                y[base + r] = a.matrix.row_dot(r, theta.as_vector()) + a.noise_stddevs[r] * w;
            }
        }
        Ok(y)
    }

    fn check_theta(&self, theta: &Parameter) -> Result<(), MeasurementError> {
        if theta.dim() != self.m_dim {
            return Err(MeasurementError::DimensionMismatch {
                expected: self.m_dim,
                got: theta.dim(),
            });
        }
        Ok(())
    }

    /// Mean per-stream signal power `mean_n(‖H_n θ‖² / P_n)`.
    pub fn mean_signal_power(&self, theta: &Parameter) -> Result<f64, MeasurementError> {
        self.check_theta(theta)?;
        let mut total = 0.0;
        for a in &self.agents {
            let p_n = a.matrix.nrows() as f64;
            let power: f64 = (0..a.matrix.nrows())
                .map(|r| a.matrix.row_dot(r, theta.as_vector()).powi(2))
                .sum();
            total += power / p_n;
        }
        Ok(total / self.agents.len() as f64)
    }

    /// Network-wide noise deviation realizing a local SNR (in dB):
    /// `σ² = mean_n(‖H_n θ‖² / P_n) / 10^(SNR/10)`.
    pub fn stddev_for_snr_db(
        &self,
        theta: &Parameter,
        snr_db: f64,
    ) -> Result<f64, MeasurementError> {
        let power = self.mean_signal_power(theta)?;
        Ok((power / 10f64.powf(snr_db / 10.0)).sqrt())
    }

    /// Same model with every stream's noise deviation replaced.
    pub fn with_uniform_noise(&self, stddev: f64) -> Result<Self, MeasurementError> {
        if !stddev.is_finite() || stddev < 0.0 {
            return Err(MeasurementError::InvalidNoise(stddev));
        }
        let mut model = self.clone();
        for a in &mut model.agents {
            a.noise_stddevs = vec![stddev; a.matrix.nrows()];
        }
        Ok(model)
    }
}

/// Scales each row to unit Euclidean norm. Returns the normalized matrix and
/// the diagonal scale factors `d_r = 1/‖row_r‖`, so `D * raw = normalized`.
pub fn normalize_rows(raw: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>), MeasurementError> {
    let mut normalized = raw.clone();
    let mut scales = DVector::zeros(raw.nrows());
    for r in 0..raw.nrows() {
        let norm = raw.row(r).norm();
        // a NaN norm (non-finite row entries) must land here too
        if norm.is_nan() || norm <= ZERO_ROW_TOL {
            return Err(MeasurementError::ZeroRow { agent: 0, row: r });
        }
        scales[r] = 1.0 / norm;
        for c in 0..raw.ncols() {
            normalized[(r, c)] = raw[(r, c)] * scales[r];
        }
    }
    Ok((normalized, scales))
}

/// Running average `ȳ(t) = (t·ȳ(t-1) + y(t)) / (t+1)` with `ȳ(-1) = 0`; the
/// first update returns its input exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningAverage {
    count: usize,
    mean: DVector<f64>,
}

impl RunningAverage {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0,
            mean: DVector::zeros(dim),
        }
    }

    /// Samples absorbed so far.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn update(&mut self, y: &DVector<f64>) -> Result<(), MeasurementError> {
        if y.len() != self.mean.len() {
            return Err(MeasurementError::DimensionMismatch {
                expected: self.mean.len(),
                got: y.len(),
            });
        }
        let t = self.count as f64;
        for (m, yi) in self.mean.iter_mut().zip(y.iter()) {
            *m = (t * *m + yi) / (t + 1.0);
        }
        self.count += 1;
        Ok(())
    }
}

/// Cells of a `grid_w × grid_h` grid within Chebyshev distance `half_span`
/// of `(x, y)`, clipped to the grid; cell `(cx, cy)` maps to parameter
/// component `cy * grid_w + cx`. Row order matches the iteration order here
/// (y-major, then x).
pub fn window_selector(
    grid_w: usize,
    grid_h: usize,
    half_span: usize,
    x: usize,
    y: usize,
) -> Vec<usize> {
    assert!(x < grid_w && y < grid_h, "window center must be on the grid");
    let x0 = x.saturating_sub(half_span);
    let x1 = (x + half_span).min(grid_w - 1);
    let y0 = y.saturating_sub(half_span);
    let y1 = (y + half_span).min(grid_h - 1);
    let mut cols = Vec::with_capacity((x1 - x0 + 1) * (y1 - y0 + 1));
    for cy in y0..=y1 {
        for cx in x0..=x1 {
            cols.push(cy * grid_w + cx);
        }
    }
    cols
}
