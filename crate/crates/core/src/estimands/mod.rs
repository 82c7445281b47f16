//! The estimand catalog.
//!
//! Each [`EstimandSpec`] knows its exact value on a finite-support law
//! ([`plugin_value`]), the nuisance functions its influence function needs
//! ([`nuisance_requirements`]) and the influence function itself
//! ([`eif_at`]). Two tags, [`EstimandSpec::DensityAtPoint`] and
//! [`EstimandSpec::ConditionalMeanAt`], exist only so that requests for them
//! fail with [`Error::NotPathwiseDifferentiable`].

mod eif;
mod exact;
mod nuisance;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use eif::{aipw_uncentered, eif_at, eif_psi_slope, incremental_weights, mediator_average};
pub use exact::{exact_nuisances, plugin_value};
pub use nuisance::{
    CovariateFn, ExposureFn, MediatorFn, Moments, NuisanceSet, NuisanceSlot, ScalarFn,
};

/// Weight function `w(x)` of the average derivative effect.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weight {
    /// `w ≡ 1`.
    Unit,
    /// `w(x) = Σ_k c_k x^k`, coefficients in increasing degree.
    Polynomial(Vec<f64>),
}

impl Weight {
    pub fn value(&self, x: f64) -> f64 {
        match self {
            Weight::Unit => 1.0,
            Weight::Polynomial(c) => c.iter().rev().fold(0.0, |acc, ck| acc * x + ck),
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            Weight::Unit => 0.0,
            Weight::Polynomial(c) => c
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, ck)| acc * x + k as f64 * ck),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "estimand", rename_all = "snake_case")]
pub enum EstimandSpec {
    PopulationMean,
    AverageDensity,
    Covariance,
    PotentialOutcomeMean { level: u8 },
    Ate,
    ExpectedConditionalCovariance,
    PartiallyLinearCoefficient,
    AverageDerivativeEffect { weight: Weight },
    Quantile { tau: f64 },
    TailConditionalExpectation { threshold: f64 },
    /// `P(Y ≤ y | X = x)` for a discrete exposure.
    ConditionalCdf { y: f64, x: f64 },
    /// Requires a finite-valued mediator.
    InterventionalDirectEffect { x1: u8, x0: u8 },
    IncrementalPropensity { odds_multiplier: f64 },
    /// Rejected: the density at a point has no finite-variance gradient.
    DensityAtPoint { y: f64 },
    /// Rejected: `E(Y | X = x)` for continuous `X`.
    ConditionalMeanAt { x: f64 },
}

impl EstimandSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EstimandSpec::PopulationMean => "population_mean",
            EstimandSpec::AverageDensity => "average_density",
            EstimandSpec::Covariance => "covariance",
            EstimandSpec::PotentialOutcomeMean { .. } => "potential_outcome_mean",
            EstimandSpec::Ate => "ate",
            EstimandSpec::ExpectedConditionalCovariance => "expected_conditional_covariance",
            EstimandSpec::PartiallyLinearCoefficient => "partially_linear_coefficient",
            EstimandSpec::AverageDerivativeEffect { .. } => "average_derivative_effect",
            EstimandSpec::Quantile { .. } => "quantile",
            EstimandSpec::TailConditionalExpectation { .. } => "tail_conditional_expectation",
            EstimandSpec::ConditionalCdf { .. } => "conditional_cdf",
            EstimandSpec::InterventionalDirectEffect { .. } => "interventional_direct_effect",
            EstimandSpec::IncrementalPropensity { .. } => "incremental_propensity",
            EstimandSpec::DensityAtPoint { .. } => "density_at_point",
            EstimandSpec::ConditionalMeanAt { .. } => "conditional_mean_at",
        }
    }

    /// Checks parameter ranges and refuses the two non-differentiable tags.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Argument(msg));
        match *self {
            EstimandSpec::DensityAtPoint { y } => Err(Error::NotPathwiseDifferentiable {
                estimand: format!("density_at_point(y = {y})"),
                reason: "the density f(y) at a single point has an unbounded (Dirac) gradient \
                         with infinite variance, so no root-n estimator exists"
                    .into(),
            }),
            EstimandSpec::ConditionalMeanAt { x } => Err(Error::NotPathwiseDifferentiable {
                estimand: format!("conditional_mean_at(x = {x})"),
                reason: "E(Y | X = x) for a continuous exposure has a gradient scaled by a \
                         Dirac delta in x, with infinite variance; use a discrete \
                         exposure estimand instead"
                    .into(),
            }),
            EstimandSpec::PotentialOutcomeMean { level } if level > 1 => {
                bad(format!("exposure level must be 0 or 1, got {level}"))
            }
            EstimandSpec::InterventionalDirectEffect { x1, x0 } if x1 > 1 || x0 > 1 => {
                bad(format!("contrast levels must be 0 or 1, got x1 = {x1}, x0 = {x0}"))
            }
            EstimandSpec::Quantile { tau } if !(tau > 0.0 && tau < 1.0) => {
                bad(format!("tau must lie in (0, 1), got {tau}"))
            }
            EstimandSpec::IncrementalPropensity { odds_multiplier }
                if !(odds_multiplier > 0.0 && odds_multiplier.is_finite()) =>
            {
                bad(format!("odds multiplier must be > 0, got {odds_multiplier}"))
            }
            EstimandSpec::TailConditionalExpectation { threshold } if !threshold.is_finite() => {
                bad("threshold must be finite".into())
            }
            EstimandSpec::ConditionalCdf { y, x } if !(y.is_finite() && x.is_finite()) => {
                bad("conditional CDF arguments must be finite".into())
            }
            EstimandSpec::AverageDerivativeEffect {
                weight: Weight::Polynomial(ref c),
            } if c.is_empty() || c.iter().any(|v| !v.is_finite()) => {
                bad("polynomial weight needs finite coefficients".into())
            }
            _ => Ok(()),
        }
    }

    /// Whether the influence function is `u(O) − ψ` for some `u` not
    /// involving `ψ`; one-step and estimating-equation estimators coincide
    /// exactly for these.
    pub fn has_unit_slope(&self) -> bool {
        matches!(
            self,
            EstimandSpec::PopulationMean
                | EstimandSpec::Covariance
                | EstimandSpec::PotentialOutcomeMean { .. }
                | EstimandSpec::Ate
                | EstimandSpec::ExpectedConditionalCovariance
                | EstimandSpec::AverageDerivativeEffect { .. }
                | EstimandSpec::InterventionalDirectEffect { .. }
                | EstimandSpec::IncrementalPropensity { .. }
        )
    }

    /// Estimands whose gradient can be checked on finite-support laws.
    /// Quantiles and average derivatives need smooth laws.
    pub fn has_discrete_oracle(&self) -> bool {
        self.validate().is_ok()
            && !matches!(
                self,
                EstimandSpec::Quantile { .. } | EstimandSpec::AverageDerivativeEffect { .. }
            )
    }

    /// One representative of every discrete-oracle estimand.
    pub fn discrete_catalog() -> Vec<EstimandSpec> {
        vec![
            EstimandSpec::PopulationMean,
            EstimandSpec::AverageDensity,
            EstimandSpec::Covariance,
            EstimandSpec::PotentialOutcomeMean { level: 1 },
            EstimandSpec::PotentialOutcomeMean { level: 0 },
            EstimandSpec::Ate,
            EstimandSpec::ExpectedConditionalCovariance,
            EstimandSpec::PartiallyLinearCoefficient,
            EstimandSpec::TailConditionalExpectation { threshold: 0.0 },
            EstimandSpec::ConditionalCdf { y: 0.0, x: 1.0 },
            EstimandSpec::InterventionalDirectEffect { x1: 1, x0: 0 },
            EstimandSpec::IncrementalPropensity {
                odds_multiplier: 2.0,
            },
        ]
    }
}

impl fmt::Display for EstimandSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimandSpec::PotentialOutcomeMean { level } => write!(f, "{}(x={level})", self.name()),
            EstimandSpec::Quantile { tau } => write!(f, "{}(tau={tau})", self.name()),
            EstimandSpec::TailConditionalExpectation { threshold } => {
                write!(f, "{}(y={threshold})", self.name())
            }
            EstimandSpec::ConditionalCdf { y, x } => write!(f, "{}(y={y}, x={x})", self.name()),
            EstimandSpec::InterventionalDirectEffect { x1, x0 } => {
                write!(f, "{}(x1={x1}, x0={x0})", self.name())
            }
            EstimandSpec::IncrementalPropensity { odds_multiplier } => {
                write!(f, "{}(epsilon={odds_multiplier})", self.name())
            }
            _ => f.write_str(self.name()),
        }
    }
}

/// Learner-backed nuisance slots the influence function of `spec` reads.
///
/// Scalar summaries (means, cell probabilities) live in [`Moments`] and are
/// always computed from the data or law directly.
pub fn nuisance_requirements(spec: &EstimandSpec) -> Result<Vec<NuisanceSlot>> {
    spec.validate()?;
    use NuisanceSlot::*;
    Ok(match spec {
        EstimandSpec::PopulationMean
        | EstimandSpec::Covariance
        | EstimandSpec::TailConditionalExpectation { .. }
        | EstimandSpec::ConditionalCdf { .. } => vec![],
        EstimandSpec::AverageDensity => vec![MarginalDensity],
        EstimandSpec::PotentialOutcomeMean { .. }
        | EstimandSpec::Ate
        | EstimandSpec::IncrementalPropensity { .. } => vec![OutcomeMean, Propensity],
        EstimandSpec::ExpectedConditionalCovariance | EstimandSpec::PartiallyLinearCoefficient => {
            vec![ConditionalMeanY, ConditionalMeanX]
        }
        EstimandSpec::AverageDerivativeEffect { .. } => vec![OutcomeMean, JointDensity],
        EstimandSpec::Quantile { .. } => vec![DensityAtQuantile],
        EstimandSpec::InterventionalDirectEffect { .. } => {
            vec![MediatedOutcome, MediatorLaw, Propensity]
        }
        EstimandSpec::DensityAtPoint { .. } | EstimandSpec::ConditionalMeanAt { .. } => {
            unreachable!("rejected by validate")
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn requirements_match_catalog() {
        assert!(nuisance_requirements(&EstimandSpec::PopulationMean).unwrap().is_empty());
        assert_eq!(
            nuisance_requirements(&EstimandSpec::Ate).unwrap(),
            vec![NuisanceSlot::OutcomeMean, NuisanceSlot::Propensity]
        );
        assert_eq!(
            nuisance_requirements(&EstimandSpec::Quantile { tau: 0.5 }).unwrap(),
            vec![NuisanceSlot::DensityAtQuantile]
        );
        assert!(matches!(
            nuisance_requirements(&EstimandSpec::DensityAtPoint { y: 0.0 }),
            Err(Error::NotPathwiseDifferentiable { .. })
        ));
        assert!(matches!(
            nuisance_requirements(&EstimandSpec::ConditionalMeanAt { x: 0.0 }),
            Err(Error::NotPathwiseDifferentiable { .. })
        ));
    }

    #[test]
    fn parameter_ranges() {
        assert!(EstimandSpec::Quantile { tau: 1.0 }.validate().is_err());
        assert!(EstimandSpec::IncrementalPropensity { odds_multiplier: 0.0 }.validate().is_err());
        assert!(EstimandSpec::PotentialOutcomeMean { level: 2 }.validate().is_err());
    }

    #[test]
    fn polynomial_weight() {
        let w = Weight::Polynomial(vec![1.0, 0.0, 0.5]);
        assert_eq!(w.value(2.0), 3.0);
        assert_eq!(w.derivative(2.0), 2.0);
        assert_eq!(Weight::Unit.derivative(3.0), 0.0);
    }

    #[test]
    fn spec_json_is_tagged() {
        let s = serde_json::to_string(&EstimandSpec::Quantile { tau: 0.5 }).unwrap();
        assert_eq!(s, r#"{"estimand":"quantile","tau":0.5}"#);
    }
}
