//! Cross-fitted debiased estimators.
//!
//! Each estimator takes a dataset and a [`CrossFit`]; row `i` always reads
//! the nuisances of its own fold, which were trained without it.

mod crossfit;
mod folds;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::distributions::Dataset;
use crate::error::{Error, Result};
use crate::estimands::{
    eif_at, eif_psi_slope, incremental_weights, mediator_average, EstimandSpec, NuisanceSet,
};

pub use crossfit::{
    fit_cross_fitted_nuisances, CrossFit, Learner, LearnerConfig, DEFAULT_TRIM, DENSITY_GRID_POINTS,
};
pub use folds::{make_folds, FoldPlan};

/// Influence values beyond this magnitude mean the trimmed weights still
/// blow up.
pub const EIF_LIMIT: f64 = 1e8;
/// Bisection tolerance for the quantile estimating equation.
pub const BISECTION_TOL: f64 = 1e-10;
/// TMLE post-condition tolerance on the mean influence value.
pub const TMLE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Plugin,
    OneStep,
    EstimatingEquation,
    Tmle,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Plugin => "plugin",
            Method::OneStep => "one_step",
            Method::EstimatingEquation => "estimating_equation",
            Method::Tmle => "tmle",
        }
    }

    /// Accepts the CLI spellings (`one-step`, `ee`) as well as the report names.
    pub fn parse(s: &str) -> Option<Method> {
        Some(match s {
            "plugin" | "plug-in" => Method::Plugin,
            "one-step" | "one_step" => Method::OneStep,
            "ee" | "estimating-equation" | "estimating_equation" => Method::EstimatingEquation,
            "tmle" => Method::Tmle,
            _ => return None,
        })
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub trim_count: usize,
    pub folds: usize,
    pub solver_iterations: usize,
    pub plugin_value: Option<f64>,
    /// Mean influence value added to the plug-in (one-step only).
    pub correction: Option<f64>,
    /// TMLE fluctuation, `[ε₁, ε₀]` for the ATE and `[ε_x]` for one arm.
    pub epsilon: Option<Vec<f64>>,
    /// Mean influence value at the final estimate.
    pub post_condition: Option<f64>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub spec: EstimandSpec,
    pub method: Method,
    pub psi_hat: f64,
    pub se: f64,
    pub ci: (f64, f64),
    pub alpha: f64,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub eif_values: Vec<f64>,
    pub diagnostics: Diagnostics,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Wald {
    pub se: f64,
    pub lo: f64,
    pub hi: f64,
    pub zero_variance: bool,
}

/// `ψ̂ ± z_{1−α/2}·sd/√n` with the `n − 1` standard deviation.
pub fn wald_interval(eif_values: &[f64], psi_hat: f64, alpha: f64) -> Result<Wald> {
    let n = eif_values.len();
    if n < 2 {
        return Err(Error::Argument(format!("a Wald interval needs n >= 2, got {n}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Argument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let mean = eif_values.iter().sum::<f64>() / n as f64;
    let var = eif_values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se = (var / n as f64).sqrt();
    let z = Normal::standard().inverse_cdf(1.0 - alpha / 2.0);
    Ok(Wald {
        se,
        lo: psi_hat - z * se,
        hi: psi_hat + z * se,
        zero_variance: var == 0.0,
    })
}

fn check_inputs(spec: &EstimandSpec, data: &Dataset, cf: &CrossFit) -> Result<()> {
    spec.validate()?;
    if cf.plan.n != data.n() {
        return Err(Error::Argument(format!(
            "nuisances cover {} rows, dataset has {}",
            cf.plan.n,
            data.n()
        )));
    }
    if data.n() < 2 {
        return Err(Error::Argument("estimation needs at least 2 rows".into()));
    }
    Ok(())
}

fn col(data: &Dataset, idx: Option<usize>, role: &str) -> Result<Vec<f64>> {
    let i = idx.ok_or_else(|| Error::Schema(format!("no column with role {role}")))?;
    Ok(data.column(i))
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn row_mean(data: &Dataset, mut g: impl FnMut(usize) -> Result<f64>) -> Result<f64> {
    let mut s = 0.0;
    for i in 0..data.n() {
        s += g(i)?;
    }
    Ok(s / data.n() as f64)
}

/// Lower empirical quantile `inf{y : F_n(y) ≥ τ}`.
fn empirical_quantile(ys: &[f64], tau: f64) -> f64 {
    let mut s = ys.to_vec();
    s.sort_by(f64::total_cmp);
    let k = ((tau * s.len() as f64).ceil() as usize).clamp(1, s.len());
    s[k - 1]
}

/// Plug-in `Ψ(P̂)`: empirical averages of each row's own-fold fitted
/// functions.
pub fn plugin_estimate(spec: &EstimandSpec, data: &Dataset, cf: &CrossFit) -> Result<f64> {
    check_inputs(spec, data, cf)?;
    let schema = data.schema();
    let rows = data.rows();
    let nu = |i: usize| cf.for_row(i);
    let moment = |v: Option<f64>, what: &str| {
        v.ok_or_else(|| Error::Nuisance(format!("`{what}` is not available")))
    };
    match spec {
        EstimandSpec::PopulationMean => Ok(mean(&col(data, schema.outcome_index(), "outcome")?)),
        EstimandSpec::AverageDensity => row_mean(data, |i| {
            cf.integral_f_squared[cf.plan.fold_of(i)]
                .ok_or_else(|| Error::Nuisance("∫f̂² needs a fitted marginal density".into()))
        }),
        EstimandSpec::Covariance => {
            let y = col(data, schema.outcome_index(), "outcome")?;
            let x = col(data, schema.exposure_index(), "exposure")?;
            row_mean(data, |i| {
                let m = &nu(i).moments;
                Ok((y[i] - moment(m.mean_y, "mean_y")?) * (x[i] - moment(m.mean_x, "mean_x")?))
            })
        }
        EstimandSpec::PotentialOutcomeMean { level } => {
            row_mean(data, |i| nu(i).m(*level as f64, &rows[i].z()))
        }
        EstimandSpec::Ate => row_mean(data, |i| {
            let z = rows[i].z();
            Ok(nu(i).m(1.0, &z)? - nu(i).m(0.0, &z)?)
        }),
        EstimandSpec::ExpectedConditionalCovariance | EstimandSpec::PartiallyLinearCoefficient => {
            let y = col(data, schema.outcome_index(), "outcome")?;
            let x = col(data, schema.exposure_index(), "exposure")?;
            let mut cross = 0.0;
            let mut sq = 0.0;
            for (i, row) in rows.iter().enumerate() {
                let z = row.z();
                let rx = x[i] - nu(i).g_x(&z)?;
                cross += (y[i] - nu(i).g_y(&z)?) * rx;
                sq += rx * rx;
            }
            if *spec == EstimandSpec::ExpectedConditionalCovariance {
                Ok(cross / data.n() as f64)
            } else if sq <= 0.0 {
                Err(Error::Positivity("exposure residuals are identically zero".into()))
            } else {
                Ok(cross / sq)
            }
        }
        EstimandSpec::AverageDerivativeEffect { weight } => {
            let x = col(data, schema.exposure_index(), "exposure")?;
            row_mean(data, |i| Ok(weight.value(x[i]) * nu(i).m_grad(x[i], &rows[i].z())?))
        }
        EstimandSpec::Quantile { tau } => {
            Ok(empirical_quantile(&col(data, schema.outcome_index(), "outcome")?, *tau))
        }
        EstimandSpec::TailConditionalExpectation { threshold } => {
            let y = col(data, schema.outcome_index(), "outcome")?;
            let tail: Vec<f64> = y.into_iter().filter(|v| v <= threshold).collect();
            if tail.is_empty() {
                return Err(Error::Positivity(format!("no outcome at or below {threshold}")));
            }
            Ok(mean(&tail))
        }
        EstimandSpec::ConditionalCdf { y: y0, x: x0 } => {
            let y = col(data, schema.outcome_index(), "outcome")?;
            let x = col(data, schema.exposure_index(), "exposure")?;
            let cell: Vec<f64> = (0..data.n())
                .filter(|&i| x[i] == *x0)
                .map(|i| (y[i] <= *y0) as u8 as f64)
                .collect();
            if cell.is_empty() {
                return Err(Error::Positivity(format!("no rows with exposure {x0}")));
            }
            Ok(mean(&cell))
        }
        EstimandSpec::InterventionalDirectEffect { x1, x0 } => row_mean(data, |i| {
            mediator_average(nu(i), *x1 as f64, *x0 as f64, &rows[i].z())
        }),
        EstimandSpec::IncrementalPropensity { odds_multiplier } => row_mean(data, |i| {
            let z = rows[i].z();
            let (g1, g0) = incremental_weights(nu(i).pi(&z)?, *odds_multiplier);
            Ok(g1 * nu(i).m(1.0, &z)? + g0 * nu(i).m(0.0, &z)?)
        }),
        EstimandSpec::DensityAtPoint { .. } | EstimandSpec::ConditionalMeanAt { .. } => {
            unreachable!("rejected by validate")
        }
    }
}

/// Per-row influence values at `psi`, each with its own fold's nuisances.
pub fn eif_values(spec: &EstimandSpec, data: &Dataset, cf: &CrossFit, psi: f64) -> Result<Vec<f64>> {
    check_inputs(spec, data, cf)?;
    data.rows()
        .iter()
        .enumerate()
        .map(|(i, o)| {
            let v = eif_at(spec, o, cf.for_row(i), psi)?;
            if !v.is_finite() || v.abs() > EIF_LIMIT {
                return Err(Error::Positivity(format!(
                    "influence value {v:e} at row {i} exceeds {EIF_LIMIT:e} even after trimming"
                )));
            }
            Ok(v)
        })
        .collect()
}

fn report(
    spec: &EstimandSpec,
    method: Method,
    psi_hat: f64,
    eif: Vec<f64>,
    alpha: f64,
    cf: &CrossFit,
    mut diagnostics: Diagnostics,
) -> Result<EstimateReport> {
    let w = wald_interval(&eif, psi_hat, alpha)?;
    if w.zero_variance {
        diagnostics
            .warnings
            .push("influence values have zero variance; se = 0".into());
    }
    if cf.trim_count > 0 {
        diagnostics.warnings.push(format!(
            "{} propensities clipped to the trim bounds",
            cf.trim_count
        ));
    }
    diagnostics.trim_count = cf.trim_count;
    diagnostics.folds = cf.plan.k;
    diagnostics.post_condition = Some(mean(&eif));
    Ok(EstimateReport {
        spec: spec.clone(),
        method,
        psi_hat,
        se: w.se,
        ci: (w.lo, w.hi),
        alpha,
        n: eif.len(),
        eif_values: eif,
        diagnostics,
    })
}

/// The naive plug-in, with influence-function standard errors.
pub fn plugin(spec: &EstimandSpec, data: &Dataset, cf: &CrossFit, alpha: f64) -> Result<EstimateReport> {
    let psi = plugin_estimate(spec, data, cf)?;
    let eif = eif_values(spec, data, cf, psi)?;
    let diagnostics = Diagnostics {
        plugin_value: Some(psi),
        ..Default::default()
    };
    report(spec, Method::Plugin, psi, eif, alpha, cf, diagnostics)
}

/// `ψ̂ = Ψ(P̂) + mean φ(O_i, P̂)`; standard errors use φ at the corrected ψ̂.
pub fn one_step(spec: &EstimandSpec, data: &Dataset, cf: &CrossFit, alpha: f64) -> Result<EstimateReport> {
    let psi0 = plugin_estimate(spec, data, cf)?;
    let correction = mean(&eif_values(spec, data, cf, psi0)?);
    let psi = psi0 + correction;
    let eif = eif_values(spec, data, cf, psi)?;
    let diagnostics = Diagnostics {
        plugin_value: Some(psi0),
        correction: Some(correction),
        ..Default::default()
    };
    report(spec, Method::OneStep, psi, eif, alpha, cf, diagnostics)
}

/// Mean quantile score at `psi`; each fold's density is read once.
fn quantile_score(tau: f64, y: &[f64], cf: &CrossFit, psi: f64) -> Result<f64> {
    let dens = cf
        .sets
        .iter()
        .map(|s| {
            let f = s.density_at_quantile(psi)?;
            if f > 0.0 && f.is_finite() {
                Ok(f)
            } else {
                Err(Error::Positivity(format!("density at {psi} is {f}")))
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut s = 0.0;
    for (i, &yi) in y.iter().enumerate() {
        let above = if yi >= psi { 1.0 } else { 0.0 };
        s += (above + tau - 1.0) / dens[cf.plan.fold_of(i)];
    }
    Ok(s / y.len() as f64)
}

/// Solves `mean φ(O_i; ψ) = 0`. Closed form when φ is affine in ψ,
/// bisection over the sample range for the quantile.
pub fn estimating_equation(
    spec: &EstimandSpec,
    data: &Dataset,
    cf: &CrossFit,
    alpha: f64,
) -> Result<EstimateReport> {
    check_inputs(spec, data, cf)?;
    let mut diagnostics = Diagnostics::default();
    let psi = if let EstimandSpec::Quantile { tau } = *spec {
        let y = col(data, data.schema().outcome_index(), "outcome")?;
        let (mut lo, mut hi) = y
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), &v| (l.min(v), u.max(v)));
        let (mut s_lo, s_hi) = (quantile_score(tau, &y, cf, lo)?, quantile_score(tau, &y, cf, hi)?);
        if s_lo == 0.0 {
            lo
        } else if s_hi == 0.0 {
            hi
        } else if s_lo.signum() == s_hi.signum() {
            return Err(Error::Solver(format!(
                "quantile score has no sign change on [{lo}, {hi}]"
            )));
        } else {
            let mut iters = 0;
            while hi - lo > BISECTION_TOL {
                let mid = 0.5 * (lo + hi);
                if mid <= lo || mid >= hi {
                    break;
                }
                let s = quantile_score(tau, &y, cf, mid)?;
                iters += 1;
                if s == 0.0 {
                    lo = mid;
                    hi = mid;
                } else if s.signum() == s_lo.signum() {
                    lo = mid;
                    s_lo = s;
                } else {
                    hi = mid;
                }
            }
            diagnostics.solver_iterations = iters;
            0.5 * (lo + hi)
        }
    } else {
        let psi0 = plugin_estimate(spec, data, cf)?;
        let phi0 = eif_values(spec, data, cf, psi0)?;
        let mut slope = 0.0;
        for (i, o) in data.rows().iter().enumerate() {
            slope += eif_psi_slope(spec, o, cf.for_row(i))?.expect("affine influence function");
        }
        let slope = slope / data.n() as f64;
        if slope == 0.0 || !slope.is_finite() {
            return Err(Error::Solver(format!("estimating equation has slope {slope} in psi")));
        }
        diagnostics.plugin_value = Some(psi0);
        diagnostics.solver_iterations = 1;
        psi0 - mean(&phi0) / slope
    };
    let eif = eif_values(spec, data, cf, psi)?;
    report(spec, Method::EstimatingEquation, psi, eif, alpha, cf, diagnostics)
}

/// One-step TMLE for a potential-outcome mean or the ATE.
///
/// Each arm's outcome fit is shifted by `ε_x/π̂_x(z)` with `ε_x` the closed-form
/// root of the arm's score equation; the estimate is the plug-in of the
/// shifted fit.
pub fn tmle_ate(spec: &EstimandSpec, data: &Dataset, cf: &CrossFit, alpha: f64) -> Result<EstimateReport> {
    check_inputs(spec, data, cf)?;
    let levels: Vec<u8> = match spec {
        EstimandSpec::Ate => vec![1, 0],
        EstimandSpec::PotentialOutcomeMean { level } => vec![*level],
        other => {
            return Err(Error::Argument(format!(
                "TMLE is implemented for potential_outcome_mean and ate only, not {other}"
            )))
        }
    };
    let schema = data.schema();
    let y = col(data, schema.outcome_index(), "outcome")?;
    let x = col(data, schema.exposure_index(), "exposure")?;
    let psi0 = plugin_estimate(spec, data, cf)?;
    let mut eps = [0.0; 2];
    for &level in &levels {
        let xl = level as f64;
        let (mut s, mut q) = (0.0, 0.0);
        for (i, row) in data.rows().iter().enumerate() {
            if x[i] != xl {
                continue;
            }
            let nuis = cf.for_row(i);
            let z = row.z();
            let p = nuis.pi_at(xl, &z)?;
            s += (y[i] - nuis.m(xl, &z)?) / p;
            q += 1.0 / (p * p);
        }
        if q == 0.0 {
            return Err(Error::Positivity(format!("no rows with exposure {level}")));
        }
        eps[1 - level as usize] = s / q;
    }
    let sets = cf
        .sets
        .iter()
        .map(|s| s.with_fluctuation(eps[0], eps[1]))
        .collect::<Result<Vec<NuisanceSet>>>()?;
    let star = CrossFit {
        plan: cf.plan.clone(),
        sets,
        trim_count: cf.trim_count,
        integral_f_squared: cf.integral_f_squared.clone(),
    };
    let psi = plugin_estimate(spec, data, &star)?;
    let eif = eif_values(spec, data, &star, psi)?;
    let post = mean(&eif);
    if !(post.abs() <= TMLE_TOL) {
        return Err(Error::Solver(format!(
            "mean influence value {post:e} after fluctuation exceeds {TMLE_TOL:e}"
        )));
    }
    let diagnostics = Diagnostics {
        plugin_value: Some(psi0),
        epsilon: Some(levels.iter().map(|&l| eps[1 - l as usize]).collect()),
        solver_iterations: 1,
        ..Default::default()
    };
    report(spec, Method::Tmle, psi, eif, alpha, cf, diagnostics)
}

pub fn estimate(
    method: Method,
    spec: &EstimandSpec,
    data: &Dataset,
    cf: &CrossFit,
    alpha: f64,
) -> Result<EstimateReport> {
    match method {
        Method::Plugin => plugin(spec, data, cf, alpha),
        Method::OneStep => one_step(spec, data, cf, alpha),
        Method::EstimatingEquation => estimating_equation(spec, data, cf, alpha),
        Method::Tmle => tmle_ate(spec, data, cf, alpha),
    }
}

/// Folds, cross-fitted nuisances and the estimate in one call.
pub fn fit_and_estimate(
    method: Method,
    spec: &EstimandSpec,
    data: &Dataset,
    config: &LearnerConfig,
    folds: usize,
    seed: u64,
    alpha: f64,
) -> Result<EstimateReport> {
    let plan = make_folds(data.n(), folds, seed)?;
    let cf = fit_cross_fitted_nuisances(data, spec, config, &plan)?;
    estimate(method, spec, data, &cf, alpha)
}
