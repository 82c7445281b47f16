use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::distributions::{Column, Dataset, Kind, Role, Schema};
use crate::error::{Error, Result};
use crate::estimands::{EstimandSpec, NuisanceSlot};
use crate::estimation::{Learner, LearnerConfig};
use crate::learners::FeatureMap;
use crate::seed::{derive_seed, rng_from};

/// Monte Carlo draws behind the truth of DGPs without a closed form.
pub const N_ORACLE: usize = 10_000_000;

fn expit(u: f64) -> f64 {
    1.0 / (1.0 + (-u).exp())
}

/// A synthetic data-generating process with known truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dgp", rename_all = "kebab-case")]
pub enum Dgp {
    /// `Y ~ N(μ, σ²)`.
    NormalMean { mu: f64, sigma: f64 },
    /// `Z ~ U(0,1)³`, `π(z) = expit(zᵀγ)`, `Y = β₀ + βₓX + zᵀβ + N(0, σ²)`.
    AteLinear {
        gamma: [f64; 3],
        beta0: f64,
        beta_x: f64,
        beta: [f64; 3],
        sigma: f64,
    },
    /// `Z ~ U(0,1)³` with `h(z) = 4(z₁−½)(z₂−½) + 3(z₃−½)²`,
    /// `logit π = 0.3(z₁−½) − 0.3(z₂−½) + a·h` and
    /// `m(x, z) = 1 + x(1 + z₁) + z₂ + b·h` where `a = propensity_strength`,
    /// `b = outcome_strength`. Quadratic with interactions, so only a degree-2
    /// model with interactions is correctly specified.
    AteNonlinear {
        sigma: f64,
        propensity_strength: f64,
        outcome_strength: f64,
    },
    /// `Z ~ U(0,1)²`, `X = z₁ + z₂² + N(0,1)`, `Y = θX + z₁z₂ + N(0, σ²)`.
    PartiallyLinear { theta: f64, sigma: f64 },
    /// `Z ~ U(0,1)`, `X ~ Bern(expit(z − ½))`, `M ~ Bern(expit(x + z − ½))`,
    /// `Y = 1 + x + 2m + z + N(0, σ²)`.
    MediationBinaryM { sigma: f64 },
    /// Two-component normal mixture for density-type estimands.
    DensityMixture {
        weight: f64,
        mu: [f64; 2],
        sigma: [f64; 2],
    },
}

/// True value of an estimand under a DGP, with its Monte Carlo standard
/// error when it was not available in closed form.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truth {
    pub value: f64,
    pub mc_se: Option<f64>,
}

impl Truth {
    fn exact(value: f64) -> Truth {
        Truth { value, mc_se: None }
    }
}

const A_DEFAULT: f64 = 1.5;
const B_DEFAULT: f64 = 0.25;

const NAMES: [&str; 6] = [
    "normal-mean",
    "ate-linear",
    "ate-nonlinear",
    "partially-linear",
    "mediation-binary-m",
    "density-mixture",
];

impl Dgp {
    /// The named DGP with its default parameters.
    pub fn from_name(name: &str) -> Result<Dgp> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "normal-mean" => Dgp::NormalMean { mu: 0.0, sigma: 1.0 },
            "ate-linear" => Dgp::AteLinear {
                gamma: [1.0, -1.0, 0.5],
                beta0: 0.5,
                beta_x: 1.0,
                beta: [1.0, 2.0, -1.0],
                sigma: 1.0,
            },
            "ate-nonlinear" => Dgp::AteNonlinear {
                sigma: 1.0,
                propensity_strength: A_DEFAULT,
                outcome_strength: B_DEFAULT,
            },
            "partially-linear" => Dgp::PartiallyLinear { theta: 1.0, sigma: 1.0 },
            "mediation-binary-m" => Dgp::MediationBinaryM { sigma: 1.0 },
            "density-mixture" => Dgp::DensityMixture {
                weight: 0.5,
                mu: [-1.0, 1.5],
                sigma: [0.5, 1.0],
            },
            other => {
                return Err(Error::Config {
                    line: 0,
                    message: format!("unknown dgp `{other}`; expected one of {}", NAMES.join(", ")),
                })
            }
        })
    }

    pub fn names() -> &'static [&'static str] {
        &NAMES
    }

    pub fn name(&self) -> &'static str {
        match self {
            Dgp::NormalMean { .. } => NAMES[0],
            Dgp::AteLinear { .. } => NAMES[1],
            Dgp::AteNonlinear { .. } => NAMES[2],
            Dgp::PartiallyLinear { .. } => NAMES[3],
            Dgp::MediationBinaryM { .. } => NAMES[4],
            Dgp::DensityMixture { .. } => NAMES[5],
        }
    }

    pub fn schema(&self) -> Arc<Schema> {
        use Kind::*;
        use Role::*;
        let y = Column::new("y", Outcome, Continuous);
        let cols = match self {
            Dgp::NormalMean { .. } | Dgp::DensityMixture { .. } => vec![y],
            Dgp::AteLinear { .. } | Dgp::AteNonlinear { .. } => vec![
                y,
                Column::new("x", Exposure, Binary),
                Column::new("z1", Covariate, Continuous),
                Column::new("z2", Covariate, Continuous),
                Column::new("z3", Covariate, Continuous),
            ],
            Dgp::PartiallyLinear { .. } => vec![
                y,
                Column::new("x", Exposure, Continuous),
                Column::new("z1", Covariate, Continuous),
                Column::new("z2", Covariate, Continuous),
            ],
            Dgp::MediationBinaryM { .. } => vec![
                y,
                Column::new("x", Exposure, Binary),
                Column::new("m", Mediator, Binary),
                Column::new("z", Covariate, Continuous),
            ],
        };
        Arc::new(Schema::new(cols).expect("static schema"))
    }

    /// `n` i.i.d. rows, deterministic in `seed`.
    pub fn generate(&self, n: usize, seed: u64) -> Result<Dataset> {
        if n == 0 {
            return Err(Error::Argument("n must be at least 1".into()));
        }
        let mut rng = rng_from(seed);
        let normal = |rng: &mut rand_chacha::ChaCha8Rng| -> f64 { rng.sample(StandardNormal) };
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| match self {
                Dgp::NormalMean { mu, sigma } => vec![mu + sigma * normal(&mut rng)],
                Dgp::AteLinear {
                    gamma,
                    beta0,
                    beta_x,
                    beta,
                    sigma,
                } => {
                    let z: [f64; 3] = [rng.random(), rng.random(), rng.random()];
                    let lin = |c: &[f64; 3]| c.iter().zip(&z).map(|(a, b)| a * b).sum::<f64>();
                    let x = (rng.random::<f64>() < expit(lin(gamma))) as u8 as f64;
                    let y = beta0 + beta_x * x + lin(beta) + sigma * normal(&mut rng);
                    vec![y, x, z[0], z[1], z[2]]
                }
                Dgp::AteNonlinear {
                    sigma,
                    propensity_strength,
                    outcome_strength,
                } => {
                    let z: [f64; 3] = [rng.random(), rng.random(), rng.random()];
                    let x = (rng.random::<f64>() < nonlinear_propensity(&z, *propensity_strength)) as u8 as f64;
                    let y = nonlinear_outcome(x, &z, *outcome_strength) + sigma * normal(&mut rng);
                    vec![y, x, z[0], z[1], z[2]]
                }
                Dgp::PartiallyLinear { theta, sigma } => {
                    let z: [f64; 2] = [rng.random(), rng.random()];
                    let x = z[0] + z[1] * z[1] + normal(&mut rng);
                    let y = theta * x + z[0] * z[1] + sigma * normal(&mut rng);
                    vec![y, x, z[0], z[1]]
                }
                Dgp::MediationBinaryM { sigma } => {
                    let z: f64 = rng.random();
                    let x = (rng.random::<f64>() < expit(z - 0.5)) as u8 as f64;
                    let m = (rng.random::<f64>() < expit(x + z - 0.5)) as u8 as f64;
                    let y = 1.0 + x + 2.0 * m + z + sigma * normal(&mut rng);
                    vec![y, x, m, z]
                }
                Dgp::DensityMixture { weight, mu, sigma } => {
                    let k = if rng.random::<f64>() < *weight { 0 } else { 1 };
                    vec![mu[k] + sigma[k] * normal(&mut rng)]
                }
            })
            .collect();
        Dataset::from_values(self.schema(), rows)
    }

    /// True value of `spec`. Closed forms where they exist; the nonlinear
    /// ATE goes through a seeded Monte Carlo oracle of `oracle_size` draws.
    pub fn truth(&self, spec: &EstimandSpec, oracle_size: usize, seed: u64) -> Result<Truth> {
        spec.validate()?;
        let unsupported = || {
            Error::Argument(format!("dgp `{}` has no known truth for {spec}", self.name()))
        };
        match (self, spec) {
            (Dgp::NormalMean { mu, .. }, EstimandSpec::PopulationMean) => Ok(Truth::exact(*mu)),
            (Dgp::NormalMean { mu, sigma }, EstimandSpec::Quantile { tau }) => {
                Ok(Truth::exact(mu + sigma * std_normal().inverse_cdf(*tau)))
            }
            (Dgp::NormalMean { sigma, .. }, EstimandSpec::AverageDensity) => {
                Ok(Truth::exact(1.0 / (2.0 * sigma * std::f64::consts::PI.sqrt())))
            }
            (Dgp::NormalMean { mu, sigma }, EstimandSpec::TailConditionalExpectation { threshold }) => {
                let c = (threshold - mu) / sigma;
                let n = std_normal();
                Ok(Truth::exact(mu - sigma * n.pdf(c) / n.cdf(c)))
            }
            (
                Dgp::AteLinear {
                    beta0, beta_x, beta, ..
                },
                _,
            ) => {
                let base = beta0 + 0.5 * beta.iter().sum::<f64>();
                match spec {
                    EstimandSpec::Ate => Ok(Truth::exact(*beta_x)),
                    EstimandSpec::PotentialOutcomeMean { level: 1 } => Ok(Truth::exact(base + beta_x)),
                    EstimandSpec::PotentialOutcomeMean { level: 0 } => Ok(Truth::exact(base)),
                    _ => Err(unsupported()),
                }
            }
            (Dgp::AteNonlinear { outcome_strength: b, .. }, _) => {
                let (hi, lo) = match spec {
                    EstimandSpec::Ate => (Some(1.0), Some(0.0)),
                    EstimandSpec::PotentialOutcomeMean { level: 1 } => (Some(1.0), None),
                    EstimandSpec::PotentialOutcomeMean { level: 0 } => (None, Some(0.0)),
                    _ => return Err(unsupported()),
                };
                let arm = |x: Option<f64>, z: &[f64; 3]| x.map_or(0.0, |x| nonlinear_outcome(x, z, *b));
                monte_carlo(oracle_size, seed, |rng| {
                    let z: [f64; 3] = [rng.random(), rng.random(), rng.random()];
                    arm(hi, &z) - arm(lo, &z)
                })
            }
            (Dgp::PartiallyLinear { theta, .. }, EstimandSpec::PartiallyLinearCoefficient) => {
                Ok(Truth::exact(*theta))
            }
            // Var(X | Z) = 1
            (Dgp::PartiallyLinear { theta, .. }, EstimandSpec::ExpectedConditionalCovariance) => {
                Ok(Truth::exact(*theta))
            }
            // Σ_m b(m, 1, z) f(m | 0, z) = 2 + z + 2·expit(z − ½), and
            // ∫₀¹ expit(z − ½) dz = ½ by symmetry of the logistic.
            (Dgp::MediationBinaryM { .. }, EstimandSpec::InterventionalDirectEffect { x1: 1, x0: 0 }) => {
                Ok(Truth::exact(3.5))
            }
            (Dgp::DensityMixture { weight, mu, .. }, EstimandSpec::PopulationMean) => {
                Ok(Truth::exact(weight * mu[0] + (1.0 - weight) * mu[1]))
            }
            (Dgp::DensityMixture { weight, mu, sigma }, EstimandSpec::AverageDensity) => {
                let w = [*weight, 1.0 - weight];
                let mut s = 0.0;
                for i in 0..2 {
                    for j in 0..2 {
                        let sd = (sigma[i] * sigma[i] + sigma[j] * sigma[j]).sqrt();
                        s += w[i] * w[j] * std_normal().pdf((mu[i] - mu[j]) / sd) / sd;
                    }
                }
                Ok(Truth::exact(s))
            }
            (Dgp::DensityMixture { weight, mu, sigma }, EstimandSpec::Quantile { tau }) => {
                let cdf = |q: f64| {
                    weight * std_normal().cdf((q - mu[0]) / sigma[0])
                        + (1.0 - weight) * std_normal().cdf((q - mu[1]) / sigma[1])
                };
                let (mut lo, mut hi) = (-50.0_f64, 50.0_f64);
                while hi - lo > 1e-13 * (1.0 + lo.abs()) {
                    let mid = 0.5 * (lo + hi);
                    if cdf(mid) < *tau {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Ok(Truth::exact(0.5 * (lo + hi)))
            }
            _ => Err(unsupported()),
        }
    }

    /// Learners that are correctly specified for this DGP.
    pub fn correct_config(&self, spec: &EstimandSpec) -> Result<LearnerConfig> {
        let map = match self {
            Dgp::AteNonlinear { .. } | Dgp::PartiallyLinear { .. } => FeatureMap::new(2, true)?,
            _ => FeatureMap::default(),
        };
        let mut config = LearnerConfig::defaults(spec)?;
        for learner in config.slots.values_mut() {
            match learner {
                Learner::Ols { feature_map, .. } | Learner::Logistic { feature_map, .. } => {
                    *feature_map = map.clone()
                }
                _ => {}
            }
        }
        Ok(config)
    }
}

fn std_normal() -> Normal {
    Normal::standard()
}

fn nonlinear_h(z: &[f64; 3]) -> f64 {
    4.0 * (z[0] - 0.5) * (z[1] - 0.5) + 3.0 * (z[2] - 0.5).powi(2)
}

fn nonlinear_propensity(z: &[f64; 3], a: f64) -> f64 {
    expit(0.3 * (z[0] - 0.5) - 0.3 * (z[1] - 0.5) + a * nonlinear_h(z))
}

fn nonlinear_outcome(x: f64, z: &[f64; 3], b: f64) -> f64 {
    1.0 + x * (1.0 + z[0]) + z[1] + b * nonlinear_h(z)
}

const ORACLE_CHUNKS: usize = 64;

/// Mean and standard error of `draw` over `size` draws, split in fixed
/// chunks so the result does not depend on the thread count.
fn monte_carlo(
    size: usize,
    seed: u64,
    draw: impl Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
) -> Result<Truth> {
    if size < 2 {
        return Err(Error::Argument("a Monte Carlo oracle needs at least 2 draws".into()));
    }
    let sums: Vec<(f64, f64)> = (0..ORACLE_CHUNKS)
        .into_par_iter()
        .map(|c| {
            let count = size / ORACLE_CHUNKS + usize::from(c < size % ORACLE_CHUNKS);
            let mut rng = rng_from(derive_seed(seed, c as u64));
            let (mut s, mut s2) = (0.0, 0.0);
            for _ in 0..count {
                let v = draw(&mut rng);
                s += v;
                s2 += v * v;
            }
            (s, s2)
        })
        .collect();
    let (s, s2) = sums.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    let n = size as f64;
    let mean = s / n;
    let var = (s2 - n * mean * mean) / (n - 1.0);
    Ok(Truth {
        value: mean,
        mc_se: Some((var.max(0.0) / n).sqrt()),
    })
}

/// The four nuisance arms of the double-robustness experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    BothCorrect,
    OutcomeWrong,
    PropensityWrong,
    BothWrong,
}

impl Arm {
    pub const ALL: [Arm; 4] = [Arm::BothCorrect, Arm::OutcomeWrong, Arm::PropensityWrong, Arm::BothWrong];

    pub fn name(&self) -> &'static str {
        match self {
            Arm::BothCorrect => "both_correct",
            Arm::OutcomeWrong => "outcome_wrong",
            Arm::PropensityWrong => "propensity_wrong",
            Arm::BothWrong => "both_wrong",
        }
    }

    pub fn parse(s: &str) -> Option<Arm> {
        Arm::ALL.into_iter().find(|a| a.name() == s)
    }

    /// A "wrong" nuisance is a main-effects model fitted to the quadratic
    /// truth; a "correct" one has degree 2 with interactions.
    pub fn config(&self, spec: &EstimandSpec) -> Result<LearnerConfig> {
        let (outcome_ok, propensity_ok) = match self {
            Arm::BothCorrect => (true, true),
            Arm::OutcomeWrong => (false, true),
            Arm::PropensityWrong => (true, false),
            Arm::BothWrong => (false, false),
        };
        let map = |ok: bool| if ok { FeatureMap::new(2, true) } else { FeatureMap::new(1, false) };
        Ok(LearnerConfig::defaults(spec)?
            .with(
                NuisanceSlot::OutcomeMean,
                Learner::Ols {
                    ridge_lambda: 0.0,
                    feature_map: map(outcome_ok)?,
                },
            )
            .with(
                NuisanceSlot::Propensity,
                Learner::Logistic {
                    ridge_lambda: 0.0,
                    feature_map: map(propensity_ok)?,
                },
            ))
    }
}
