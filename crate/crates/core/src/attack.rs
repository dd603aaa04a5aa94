//! Measurement attacks.
//!
//! An adversary controls a fixed subset of global measurement streams and
//! rewrites their values before the agents see them. Strategies are pure
//! functions of `(iteration, stream, clean value, model, θ*)`: the adversary
//! knows the true parameter and the measurement matrices, but cannot touch
//! streams outside the compromised set, which keeps uncompromised values
//! bit-identical through [`AttackScenario::apply`].

use nalgebra::DVector;
use rand::seq::index::sample;
use rand::Rng;
use std::collections::BTreeMap;
use std::collections::BTreeSet;
use thiserror::Error;

use crate::measurement::{MeasurementModel, Parameter};

#[derive(Debug, Error)]
pub enum AttackError {
    #[error("compromised count {count} must be less than the stream total {total}")]
    InvalidCount { count: usize, total: usize },
    #[error("compromised stream {stream} out of range for {total} streams")]
    StreamOutOfRange { stream: usize, total: usize },
    #[error("every stream is compromised; at least one must stay clean")]
    AllStreamsCompromised,
}

/// How compromised streams are rewritten. `ConstantValue` replaces the
/// reading outright (noise and all); the parameter-referencing strategies
/// keep the stream's own noise draw by shifting the clean value.
#[derive(Debug, Clone, PartialEq)]
pub enum AttackStrategy {
    /// Leave the value unchanged (compromised but dormant).
    NoAttack,
    /// Stream reads exactly `value`.
    ConstantValue { value: f64 },
    /// Stream reads `factor * h_p·θ* + w`, i.e. the clean value shifted by
    /// `(factor - 1) * h_p·θ*`.
    ScaledParameter { factor: f64 },
    /// Stream reads `h_p·θ̃ + w` for a fixed decoy parameter `θ̃`.
    FixedTarget { target: Parameter },
    /// Additive disturbance per stream and iteration; entries beyond the end
    /// of a series mean the disturbance has stopped (zero). Streams missing
    /// from the table are left at their clean value.
    CustomTimeSeries {
        disturbances: BTreeMap<usize, Vec<f64>>,
    },
}

/// JSON `kind` tags of the built-in strategies.
pub fn builtin_kinds() -> &'static [&'static str] {
    &[
        "no_attack",
        "constant_value",
        "scaled_parameter",
        "fixed_target",
        "custom_time_series",
    ]
}

impl AttackStrategy {
    /// JSON `kind` tag of this strategy.
    pub fn kind(&self) -> &'static str {
        match self {
            AttackStrategy::NoAttack => "no_attack",
            AttackStrategy::ConstantValue { .. } => "constant_value",
            AttackStrategy::ScaledParameter { .. } => "scaled_parameter",
            AttackStrategy::FixedTarget { .. } => "fixed_target",
            AttackStrategy::CustomTimeSeries { .. } => "custom_time_series",
        }
    }

    /// Attacked value for global stream `p` at iteration `t`. Pure: equal
    /// arguments give equal results.
    pub fn attacked_value(
        &self,
        t: usize,
        p: usize,
        clean: f64,
        model: &MeasurementModel,
        theta: &Parameter,
    ) -> f64 {
        match self {
            AttackStrategy::NoAttack => clean,
            AttackStrategy::ConstantValue { value } => *value,
            AttackStrategy::ScaledParameter { factor } => {
                clean + (factor - 1.0) * model.stream_dot(p, theta.as_vector())
            }
            AttackStrategy::FixedTarget { target } => {
                clean
                    + model.stream_dot(p, target.as_vector())
                    - model.stream_dot(p, theta.as_vector())
            }
            AttackStrategy::CustomTimeSeries { disturbances } => {
                let d = disturbances
                    .get(&p)
                    .and_then(|series| series.get(t))
                    .copied()
                    .unwrap_or(0.0);
                clean + d
            }
        }
    }
}

/// A compromised stream set plus the rewrite strategy. At least one stream
/// must remain clean.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackScenario {
    compromised: BTreeSet<usize>,
    strategy: AttackStrategy,
}

impl AttackScenario {
    pub fn new(
        compromised: BTreeSet<usize>,
        strategy: AttackStrategy,
        total_streams: usize,
    ) -> Result<Self, AttackError> {
        if let Some(&p) = compromised.iter().find(|&&p| p >= total_streams) {
            return Err(AttackError::StreamOutOfRange {
                stream: p,
                total: total_streams,
            });
        }
        if compromised.len() >= total_streams {
            return Err(AttackError::AllStreamsCompromised);
        }
        Ok(Self {
            compromised,
            strategy,
        })
    }

    /// Scenario allowed to compromise every stream; the estimator has no
    /// recovery guarantee there, but consensus diagnostics still apply.
    pub fn new_unchecked(compromised: BTreeSet<usize>, strategy: AttackStrategy) -> Self {
        Self {
            compromised,
            strategy,
        }
    }

    pub fn compromised(&self) -> &BTreeSet<usize> {
        &self.compromised
    }

    pub fn strategy(&self) -> &AttackStrategy {
        &self.strategy
    }

    /// Rewrites the stacked measurement: compromised streams take the
    /// strategy's value, all others are returned bit-identical.
    pub fn apply(
        &self,
        t: usize,
        clean: &DVector<f64>,
        model: &MeasurementModel,
        theta: &Parameter,
    ) -> DVector<f64> {
        let mut out = clean.clone();
        for &p in &self.compromised {
            out[p] = self
                .strategy
                .attacked_value(t, p, clean[p], model, theta);
        }
        out
    }
}

/// Uniform random compromised set of the given size; must leave at least one
/// stream clean.
pub fn random_compromised_set<R: Rng + ?Sized>(
    total_streams: usize,
    count: usize,
    rng: &mut R,
) -> Result<BTreeSet<usize>, AttackError> {
    if count >= total_streams {
        return Err(AttackError::InvalidCount {
            count,
            total: total_streams,
        });
    }
    Ok(sample(rng, total_streams, count).into_iter().collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measurement::{AgentMatrix, MeasurementModel};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;
    use proptest::prelude::*;

    fn identity_model(n_agents: usize, m: usize) -> MeasurementModel {
        let agents = (0..n_agents)
            .map(|_| (AgentMatrix::Dense(DMatrix::identity(m, m)), vec![1.0; m]))
            .collect();
        MeasurementModel::new(m, agents).unwrap()
    }

    fn theta2(a: f64, b: f64) -> Parameter {
        Parameter::from_slice(&[a, b]).unwrap()
    }

    #[test]
    fn clean_streams_are_bit_identical() {
        let model = identity_model(3, 2);
        let theta = theta2(1.0, -1.0);
        let clean = DVector::from_fn(6, |i, _| 0.1 * i as f64 + 0.05);
        let scenario = AttackScenario::new(
            BTreeSet::from([1, 4]),
            AttackStrategy::ConstantValue { value: 99.0 },
            6,
        )
        .unwrap();
        let attacked = scenario.apply(0, &clean, &model, &theta);
        for p in 0..6 {
            if p == 1 || p == 4 {
                assert_eq!(attacked[p], 99.0);
            } else {
                assert!(attacked[p].to_bits() == clean[p].to_bits());
            }
        }
    }

    #[test]
    fn scaled_parameter_shifts_by_four_signal_units_at_minus_three() {
        // factor -3 on an identity row: output = input - 4 * theta_component
        let model = identity_model(1, 2);
        let theta = theta2(2.0, 5.0);
        let clean = DVector::from_row_slice(&[2.3, 4.6]);
        let scenario = AttackScenario::new(
            BTreeSet::from([0, 1]),
            AttackStrategy::ScaledParameter { factor: -3.0 },
            3, // pretend one extra clean stream exists elsewhere
        )
        .unwrap();
        let attacked = scenario.apply(7, &clean, &model, &theta);
        assert_relative_eq!(attacked[0], 2.3 - 4.0 * 2.0, epsilon = 1e-12);
        assert_relative_eq!(attacked[1], 4.6 - 4.0 * 5.0, epsilon = 1e-12);
    }

    #[test]
    fn scaled_parameter_with_unit_factor_is_identity() {
        let model = identity_model(2, 2);
        let theta = theta2(3.0, -4.0);
        let clean = DVector::from_fn(4, |i, _| i as f64 - 1.7);
        let scenario = AttackScenario::new(
            (0..3).collect(),
            AttackStrategy::ScaledParameter { factor: 1.0 },
            4,
        )
        .unwrap();
        let attacked = scenario.apply(0, &clean, &model, &theta);
        assert_eq!(attacked, clean);
    }

    #[test]
    fn fixed_target_reads_decoy_signal_plus_noise() {
        let model = identity_model(1, 2);
        let theta = theta2(1.0, 1.0);
        let decoy = theta2(-9.0, 2.0);
        // clean = h·theta + w with w = 0.25
        let clean = DVector::from_row_slice(&[1.25, 1.25]);
        let scenario = AttackScenario::new(
            BTreeSet::from([0]),
            AttackStrategy::FixedTarget { target: decoy },
            2,
        )
        .unwrap();
        let attacked = scenario.apply(0, &clean, &model, &theta);
        assert_relative_eq!(attacked[0], -9.0 + 0.25, epsilon = 1e-12);
        assert_eq!(attacked[1], 1.25);
    }

    #[test]
    fn custom_series_stops_after_table_ends() {
        let model = identity_model(1, 1);
        let theta = Parameter::from_slice(&[0.0]).unwrap();
        let clean = DVector::from_row_slice(&[1.0]);
        let scenario = AttackScenario::new_unchecked(
            BTreeSet::from([0]),
            AttackStrategy::CustomTimeSeries {
                disturbances: BTreeMap::from([(0, vec![10.0, 20.0])]),
            },
        );
        assert_eq!(scenario.apply(0, &clean, &model, &theta)[0], 11.0);
        assert_eq!(scenario.apply(1, &clean, &model, &theta)[0], 21.0);
        assert_eq!(scenario.apply(2, &clean, &model, &theta)[0], 1.0);
    }

    #[test]
    fn scenario_rejects_full_compromise_and_bad_streams() {
        assert!(matches!(
            AttackScenario::new((0..3).collect(), AttackStrategy::NoAttack, 3),
            Err(AttackError::AllStreamsCompromised)
        ));
        assert!(matches!(
            AttackScenario::new(BTreeSet::from([5]), AttackStrategy::NoAttack, 3),
            Err(AttackError::StreamOutOfRange { stream: 5, .. })
        ));
    }

    #[test]
    fn random_set_rejects_count_equal_to_total() {
        let mut rng = crate::rng::derive_rng(1, 0);
        assert!(matches!(
            random_compromised_set(5, 5, &mut rng),
            Err(AttackError::InvalidCount { count: 5, total: 5 })
        ));
    }

    #[test]
    fn random_sets_are_uniformly_sized_and_in_range() {
        let mut rng = crate::rng::derive_rng(2, 0);
        for _ in 0..100 {
            let set = random_compromised_set(10, 4, &mut rng).unwrap();
            assert_eq!(set.len(), 4);
            assert!(set.iter().all(|&p| p < 10));
        }
    }

    #[test]
    fn random_set_covers_all_streams_across_draws() {
        // each stream index should appear eventually; 400 draws of 4-of-10
        // miss a given index with probability (0.6)^400
        let mut rng = crate::rng::derive_rng(3, 0);
        let mut seen = BTreeSet::new();
        for _ in 0..400 {
            seen.extend(random_compromised_set(10, 4, &mut rng).unwrap());
        }
        assert_eq!(seen.len(), 10);
    }

    proptest! {
        #[test]
        fn strategies_are_pure(t in 0usize..50, value in -100.0f64..100.0, factor in -5.0f64..5.0) {
            let model = identity_model(1, 2);
            let theta = theta2(1.5, -2.5);
            let clean = DVector::from_row_slice(&[value, -value]);
            for strategy in [
                AttackStrategy::NoAttack,
                AttackStrategy::ConstantValue { value },
                AttackStrategy::ScaledParameter { factor },
                AttackStrategy::FixedTarget { target: theta2(-9.0, 0.0) },
            ] {
                let s = AttackScenario::new(BTreeSet::from([0]), strategy, 2).unwrap();
                let a = s.apply(t, &clean, &model, &theta);
                let b = s.apply(t, &clean, &model, &theta);
                prop_assert_eq!(a, b);
            }
        }
    }
}
