use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `g(z)`
pub type CovariateFn = Arc<dyn Fn(&[f64]) -> Result<f64> + Send + Sync>;
/// `g(x, z)`
pub type ExposureFn = Arc<dyn Fn(f64, &[f64]) -> Result<f64> + Send + Sync>;
/// `g(m, x, z)`
pub type MediatorFn = Arc<dyn Fn(f64, f64, &[f64]) -> Result<f64> + Send + Sync>;
/// `g(y)`
pub type ScalarFn = Arc<dyn Fn(f64) -> Result<f64> + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NuisanceSlot {
    /// `m(x, z) = E(Y | X = x, Z = z)`, with its x-derivative when X is continuous.
    OutcomeMean,
    /// `π(z) = P(X = 1 | Z = z)`.
    Propensity,
    /// `E(Y | Z = z)`.
    ConditionalMeanY,
    /// `E(X | Z = z)`.
    ConditionalMeanX,
    /// Density (or mass function) of `Y`.
    MarginalDensity,
    /// Joint density of `(X, Z)` and its x-derivative.
    JointDensity,
    /// `f(m | x, z)` over a finite mediator support.
    MediatorLaw,
    /// `b(m, x, z) = E(Y | M = m, X = x, Z = z)`.
    MediatedOutcome,
    /// Density of `Y`, read at the quantile.
    DensityAtQuantile,
}

impl NuisanceSlot {
    pub const ALL: [NuisanceSlot; 9] = [
        NuisanceSlot::OutcomeMean,
        NuisanceSlot::Propensity,
        NuisanceSlot::ConditionalMeanY,
        NuisanceSlot::ConditionalMeanX,
        NuisanceSlot::MarginalDensity,
        NuisanceSlot::JointDensity,
        NuisanceSlot::MediatorLaw,
        NuisanceSlot::MediatedOutcome,
        NuisanceSlot::DensityAtQuantile,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            NuisanceSlot::OutcomeMean => "outcome_mean",
            NuisanceSlot::Propensity => "propensity",
            NuisanceSlot::ConditionalMeanY => "conditional_mean_y",
            NuisanceSlot::ConditionalMeanX => "conditional_mean_x",
            NuisanceSlot::MarginalDensity => "marginal_density",
            NuisanceSlot::JointDensity => "joint_density",
            NuisanceSlot::MediatorLaw => "mediator_law",
            NuisanceSlot::MediatedOutcome => "mediated_outcome",
            NuisanceSlot::DensityAtQuantile => "density_at_quantile",
        }
    }

    pub fn parse(s: &str) -> Option<NuisanceSlot> {
        NuisanceSlot::ALL.into_iter().find(|slot| slot.name() == s)
    }
}

impl fmt::Display for NuisanceSlot {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Scalar summaries some influence functions need besides fitted functions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean_y: Option<f64>,
    pub mean_x: Option<f64>,
    /// `F(threshold)` for the tail conditional expectation.
    pub tail_cdf: Option<f64>,
    /// `P(X = x)` for the conditional CDF.
    pub exposure_cell_prob: Option<f64>,
    /// `E[{X − E(X|Z)}²]` for the partially linear coefficient.
    pub residual_variance_x: Option<f64>,
}

/// Point-evaluable nuisance functions. Slots not needed by an estimand stay
/// `None`.
#[derive(Clone, Default)]
pub struct NuisanceSet {
    pub outcome_mean: Option<ExposureFn>,
    pub outcome_mean_grad: Option<ExposureFn>,
    pub propensity: Option<CovariateFn>,
    pub conditional_mean_y: Option<CovariateFn>,
    pub conditional_mean_x: Option<CovariateFn>,
    pub marginal_density: Option<ScalarFn>,
    pub joint_density: Option<ExposureFn>,
    pub joint_density_grad: Option<ExposureFn>,
    pub mediator_law: Option<MediatorFn>,
    pub mediator_support: Vec<f64>,
    pub mediated_outcome: Option<MediatorFn>,
    pub density_at_quantile: Option<ScalarFn>,
    pub moments: Moments,
}

impl fmt::Debug for NuisanceSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let present: Vec<&str> = NuisanceSlot::ALL
            .iter()
            .filter(|s| self.has(**s))
            .map(|s| s.name())
            .collect();
        f.debug_struct("NuisanceSet")
            .field("slots", &present)
            .field("mediator_support", &self.mediator_support)
            .field("moments", &self.moments)
            .finish()
    }
}

fn missing(what: &str) -> Error {
    Error::Nuisance(format!("`{what}` is not available"))
}

impl NuisanceSet {
    pub fn has(&self, slot: NuisanceSlot) -> bool {
        match slot {
            NuisanceSlot::OutcomeMean => self.outcome_mean.is_some(),
            NuisanceSlot::Propensity => self.propensity.is_some(),
            NuisanceSlot::ConditionalMeanY => self.conditional_mean_y.is_some(),
            NuisanceSlot::ConditionalMeanX => self.conditional_mean_x.is_some(),
            NuisanceSlot::MarginalDensity => self.marginal_density.is_some(),
            NuisanceSlot::JointDensity => {
                self.joint_density.is_some() && self.joint_density_grad.is_some()
            }
            NuisanceSlot::MediatorLaw => {
                self.mediator_law.is_some() && !self.mediator_support.is_empty()
            }
            NuisanceSlot::MediatedOutcome => self.mediated_outcome.is_some(),
            NuisanceSlot::DensityAtQuantile => self.density_at_quantile.is_some(),
        }
    }

    /// Errors naming the first required slot that is absent.
    pub fn require(&self, slots: &[NuisanceSlot]) -> Result<()> {
        match slots.iter().find(|s| !self.has(**s)) {
            Some(s) => Err(missing(s.name())),
            None => Ok(()),
        }
    }

    pub fn m(&self, x: f64, z: &[f64]) -> Result<f64> {
        self.outcome_mean.as_ref().ok_or_else(|| missing("outcome_mean"))?(x, z)
    }

    pub fn m_grad(&self, x: f64, z: &[f64]) -> Result<f64> {
        self.outcome_mean_grad
            .as_ref()
            .ok_or_else(|| missing("outcome_mean gradient"))?(x, z)
    }

    /// Propensity, required to lie strictly inside (0, 1).
    pub fn pi(&self, z: &[f64]) -> Result<f64> {
        let p = self.propensity.as_ref().ok_or_else(|| missing("propensity"))?(z)?;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Positivity(format!("propensity {p} not inside (0, 1)")));
        }
        Ok(p)
    }

    /// `P(X = level | Z = z)`.
    pub fn pi_at(&self, level: f64, z: &[f64]) -> Result<f64> {
        let p = self.pi(z)?;
        Ok(if level == 1.0 { p } else { 1.0 - p })
    }

    pub fn g_y(&self, z: &[f64]) -> Result<f64> {
        self.conditional_mean_y
            .as_ref()
            .ok_or_else(|| missing("conditional_mean_y"))?(z)
    }

    pub fn g_x(&self, z: &[f64]) -> Result<f64> {
        self.conditional_mean_x
            .as_ref()
            .ok_or_else(|| missing("conditional_mean_x"))?(z)
    }

    pub fn f_y(&self, y: f64) -> Result<f64> {
        self.marginal_density
            .as_ref()
            .ok_or_else(|| missing("marginal_density"))?(y)
    }

    pub fn f_xz(&self, x: f64, z: &[f64]) -> Result<f64> {
        self.joint_density.as_ref().ok_or_else(|| missing("joint_density"))?(x, z)
    }

    pub fn f_xz_grad(&self, x: f64, z: &[f64]) -> Result<f64> {
        self.joint_density_grad
            .as_ref()
            .ok_or_else(|| missing("joint_density gradient"))?(x, z)
    }

    pub fn mediator_prob(&self, m: f64, x: f64, z: &[f64]) -> Result<f64> {
        self.mediator_law.as_ref().ok_or_else(|| missing("mediator_law"))?(m, x, z)
    }

    pub fn b(&self, m: f64, x: f64, z: &[f64]) -> Result<f64> {
        self.mediated_outcome
            .as_ref()
            .ok_or_else(|| missing("mediated_outcome"))?(m, x, z)
    }

    pub fn density_at_quantile(&self, q: f64) -> Result<f64> {
        self.density_at_quantile
            .as_ref()
            .ok_or_else(|| missing("density_at_quantile"))?(q)
    }

    pub(crate) fn moment(value: Option<f64>, what: &str) -> Result<f64> {
        value.ok_or_else(|| missing(what))
    }

    /// Retargets the outcome regression by `m*(x, z) = m(x, z) + ε_x / P(X = x | z)`.
    pub fn with_fluctuation(&self, eps1: f64, eps0: f64) -> Result<NuisanceSet> {
        let base = self.outcome_mean.clone().ok_or_else(|| missing("outcome_mean"))?;
        let prop = self.propensity.clone().ok_or_else(|| missing("propensity"))?;
        let mut out = self.clone();
        out.outcome_mean = Some(Arc::new(move |x: f64, z: &[f64]| {
            let p = prop(z)?;
            let (eps, px) = if x == 1.0 { (eps1, p) } else { (eps0, 1.0 - p) };
            Ok(base(x, z)? + eps / px)
        }));
        Ok(out)
    }
}
