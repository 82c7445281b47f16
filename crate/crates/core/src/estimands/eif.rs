use super::nuisance::NuisanceSet;
use super::EstimandSpec;
use crate::distributions::Observation;
use crate::error::{Error, Result};

fn step(u: f64) -> f64 {
    if u >= 0.0 {
        1.0
    } else {
        0.0
    }
}

fn outcome(o: &Observation) -> Result<f64> {
    Ok(o.values()[o.schema().require_outcome()?])
}

fn exposure(o: &Observation) -> Result<f64> {
    Ok(o.values()[o.schema().require_exposure()?])
}

fn mediator(o: &Observation) -> Result<f64> {
    Ok(o.values()[o.schema().require_mediator()?])
}

fn positive(v: f64, what: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Positivity(format!("{what} is {v}")))
    }
}

/// Uncentred augmented-IPW term for arm `level`:
/// `1{X = x}/P(X = x | Z)·(Y − m(x, Z)) + m(x, Z)`.
pub fn aipw_uncentered(o: &Observation, nuis: &NuisanceSet, level: f64) -> Result<f64> {
    let (y, x, z) = (outcome(o)?, exposure(o)?, o.z());
    let m = nuis.m(level, &z)?;
    let ipw = if x == level {
        (y - m) / nuis.pi_at(level, &z)?
    } else {
        0.0
    };
    Ok(ipw + m)
}

/// `a(z) = Σ_m b(m, x1, z) f(m | x0, z)`; mediator values with zero mass
/// under `x0` are skipped so `b` is never read where it is undefined.
pub fn mediator_average(nuis: &NuisanceSet, x1: f64, x0: f64, z: &[f64]) -> Result<f64> {
    let mut a = 0.0;
    for &m in &nuis.mediator_support {
        let f = nuis.mediator_prob(m, x0, z)?;
        if f > 0.0 {
            a += nuis.b(m, x1, z)? * f;
        }
    }
    Ok(a)
}

/// Shifted treatment probabilities `(g(1|z), g(0|z))` for odds multiplier `eps`.
pub fn incremental_weights(pi: f64, eps: f64) -> (f64, f64) {
    let d = eps * pi + 1.0 - pi;
    (eps * pi / d, (1.0 - pi) / d)
}

/// Efficient influence function of `spec` at `o`, with nuisances `nuis`
/// and estimand value `psi`.
pub fn eif_at(spec: &EstimandSpec, o: &Observation, nuis: &NuisanceSet, psi: f64) -> Result<f64> {
    spec.validate()?;
    let moment = NuisanceSet::moment;
    Ok(match spec {
        EstimandSpec::PopulationMean => outcome(o)? - psi,
        EstimandSpec::AverageDensity => 2.0 * (nuis.f_y(outcome(o)?)? - psi),
        EstimandSpec::Covariance => {
            let my = moment(nuis.moments.mean_y, "mean_y")?;
            let mx = moment(nuis.moments.mean_x, "mean_x")?;
            (outcome(o)? - my) * (exposure(o)? - mx) - psi
        }
        EstimandSpec::PotentialOutcomeMean { level } => {
            aipw_uncentered(o, nuis, *level as f64)? - psi
        }
        EstimandSpec::Ate => aipw_uncentered(o, nuis, 1.0)? - aipw_uncentered(o, nuis, 0.0)? - psi,
        EstimandSpec::ExpectedConditionalCovariance => {
            let z = o.z();
            (outcome(o)? - nuis.g_y(&z)?) * (exposure(o)? - nuis.g_x(&z)?) - psi
        }
        EstimandSpec::PartiallyLinearCoefficient => {
            let z = o.z();
            let b = positive(
                moment(nuis.moments.residual_variance_x, "residual_variance_x")?,
                "E[(X - E(X|Z))^2]",
            )?;
            let rx = exposure(o)? - nuis.g_x(&z)?;
            let ry = outcome(o)? - nuis.g_y(&z)?;
            (rx * ry - rx * rx * psi) / b
        }
        EstimandSpec::AverageDerivativeEffect { weight } => {
            let (y, x, z) = (outcome(o)?, exposure(o)?, o.z());
            let f = positive(nuis.f_xz(x, &z)?, "joint density f(x, z)")?;
            let score = nuis.f_xz_grad(x, &z)? / f;
            let l = -weight.derivative(x) - weight.value(x) * score;
            let m = nuis.m(x, &z)?;
            l * (y - m) + weight.value(x) * nuis.m_grad(x, &z)? - psi
        }
        EstimandSpec::Quantile { tau } => {
            let f = positive(nuis.density_at_quantile(psi)?, "density at the quantile")?;
            (step(outcome(o)? - psi) + tau - 1.0) / f
        }
        EstimandSpec::TailConditionalExpectation { threshold } => {
            let cdf = positive(moment(nuis.moments.tail_cdf, "tail_cdf")?, "F(threshold)")?;
            let y = outcome(o)?;
            step(threshold - y) / cdf * (y - psi)
        }
        EstimandSpec::ConditionalCdf { y: y0, x: x0 } => {
            let p = positive(
                moment(nuis.moments.exposure_cell_prob, "exposure_cell_prob")?,
                "P(X = x)",
            )?;
            if exposure(o)? == *x0 {
                (step(y0 - outcome(o)?) - psi) / p
            } else {
                0.0
            }
        }
        EstimandSpec::InterventionalDirectEffect { x1, x0 } => {
            let (x1, x0) = (*x1 as f64, *x0 as f64);
            let (y, x, m, z) = (outcome(o)?, exposure(o)?, mediator(o)?, o.z());
            let a = mediator_average(nuis, x1, x0, &z)?;
            let mut phi = a - psi;
            if x == x1 {
                let f1 = positive(nuis.mediator_prob(m, x1, &z)?, "f(m | x1, z)")?;
                let f0 = nuis.mediator_prob(m, x0, &z)?;
                phi += f0 / (f1 * nuis.pi_at(x1, &z)?) * (y - nuis.b(m, x1, &z)?);
            }
            if x == x0 {
                phi += (nuis.b(m, x1, &z)? - a) / nuis.pi_at(x0, &z)?;
            }
            phi
        }
        EstimandSpec::IncrementalPropensity { odds_multiplier } => {
            let (x, z) = (exposure(o)?, o.z());
            let pi = nuis.pi(&z)?;
            let (g1, g0) = incremental_weights(pi, *odds_multiplier);
            let phi1 = aipw_uncentered(o, nuis, 1.0)?;
            let phi0 = aipw_uncentered(o, nuis, 0.0)?;
            let contrast = nuis.m(1.0, &z)? - nuis.m(0.0, &z)?;
            g1 * phi1 + g0 * phi0 + g1 * g0 / (pi * (1.0 - pi)) * (x - pi) * contrast - psi
        }
        EstimandSpec::DensityAtPoint { .. } | EstimandSpec::ConditionalMeanAt { .. } => {
            unreachable!("rejected by validate")
        }
    })
}

/// `∂φ/∂ψ` at `o` when the influence function is affine in `ψ`; `None` for
/// the quantile, whose influence function is not.
pub fn eif_psi_slope(spec: &EstimandSpec, o: &Observation, nuis: &NuisanceSet) -> Result<Option<f64>> {
    spec.validate()?;
    let moment = NuisanceSet::moment;
    Ok(Some(match spec {
        EstimandSpec::Quantile { .. } => return Ok(None),
        EstimandSpec::AverageDensity => -2.0,
        EstimandSpec::PartiallyLinearCoefficient => {
            let b = moment(nuis.moments.residual_variance_x, "residual_variance_x")?;
            let rx = exposure(o)? - nuis.g_x(&o.z())?;
            -rx * rx / b
        }
        EstimandSpec::TailConditionalExpectation { threshold } => {
            let cdf = moment(nuis.moments.tail_cdf, "tail_cdf")?;
            -step(threshold - outcome(o)?) / cdf
        }
        EstimandSpec::ConditionalCdf { x, .. } => {
            let p = moment(nuis.moments.exposure_cell_prob, "exposure_cell_prob")?;
            if exposure(o)? == *x {
                -1.0 / p
            } else {
                0.0
            }
        }
        _ => -1.0,
    }))
}
