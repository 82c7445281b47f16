//! Exact functionals of finite-support laws.

use std::collections::HashMap;
use std::sync::Arc;

use super::eif::{incremental_weights, mediator_average};
use super::nuisance::{Moments, NuisanceSet};
use super::EstimandSpec;
use crate::distributions::{AtomKey, DiscreteDistribution, Kind, Observation};
use crate::error::{Error, Result};

/// Conditional means `E[v | key]` accumulated over atoms.
#[derive(Default)]
struct CondTable(HashMap<AtomKey, (f64, f64)>);

impl CondTable {
    fn add(&mut self, key: &[f64], p: f64, v: f64) {
        let e = self.0.entry(AtomKey::of(key)).or_insert((0.0, 0.0));
        e.0 += p;
        e.1 += p * v;
    }

    fn mass(&self, key: &[f64]) -> f64 {
        self.0.get(&AtomKey::of(key)).map_or(0.0, |e| e.0)
    }

    fn mean(&self, key: &[f64], what: &str) -> Result<f64> {
        match self.0.get(&AtomKey::of(key)) {
            Some(&(m, s)) if m > 0.0 => Ok(s / m),
            _ => Err(Error::Positivity(format!("no probability mass for {what} at {key:?}"))),
        }
    }
}

fn prepend(head: &[f64], z: &[f64]) -> Vec<f64> {
    let mut k = Vec::with_capacity(head.len() + z.len());
    k.extend_from_slice(head);
    k.extend_from_slice(z);
    k
}

/// The true nuisance functions of `dist`, looked up cell by cell.
///
/// Every slot the schema allows is filled; evaluating a conditional at a
/// cell with no mass is a positivity error.
pub fn exact_nuisances(spec: &EstimandSpec, dist: &DiscreteDistribution) -> Result<NuisanceSet> {
    let schema = dist.schema().clone();
    let yi = schema.outcome_index();
    let xi = schema.exposure_index();
    let mi = schema.mediator_index();
    let mut nuis = NuisanceSet::default();

    if let Some(yi) = yi {
        let mut f_y = CondTable::default();
        let mut ez_y = CondTable::default();
        for (o, p) in dist.atoms() {
            let y = o.values()[yi];
            f_y.add(&[y], p, 1.0);
            ez_y.add(&o.z(), p, y);
        }
        let f_y = Arc::new(f_y);
        nuis.marginal_density = Some(Arc::new(move |y: f64| Ok(f_y.mass(&[y]))));
        let ez_y = Arc::new(ez_y);
        nuis.conditional_mean_y = Some(Arc::new(move |z: &[f64]| ez_y.mean(z, "E(Y | Z)")));
        nuis.moments.mean_y = Some(dist.expect(|o| o.values()[yi]));
        if let EstimandSpec::TailConditionalExpectation { threshold } = *spec {
            nuis.moments.tail_cdf = Some(dist.expect(|o| (o.values()[yi] <= threshold) as u8 as f64));
        }
    }

    if let Some(xi) = xi {
        let mut ez_x = CondTable::default();
        for (o, p) in dist.atoms() {
            ez_x.add(&o.z(), p, o.values()[xi]);
        }
        let ez_x = Arc::new(ez_x);
        let g_x = {
            let t = ez_x.clone();
            move |z: &[f64]| t.mean(z, "E(X | Z)")
        };
        nuis.moments.mean_x = Some(dist.expect(|o| o.values()[xi]));
        nuis.moments.residual_variance_x = Some(dist.try_expect(|o| {
            let r = o.values()[xi] - g_x(&o.z())?;
            Ok(r * r)
        })?);
        nuis.conditional_mean_x = Some(Arc::new(g_x));
        if let EstimandSpec::ConditionalCdf { x, .. } = *spec {
            nuis.moments.exposure_cell_prob = Some(dist.expect(|o| (o.values()[xi] == x) as u8 as f64));
        }
        if schema.exposure_kind() == Some(Kind::Binary) {
            nuis.propensity = Some(Arc::new(move |z: &[f64]| ez_x.mean(z, "P(X = 1 | Z)")));
        }
    }

    if let (Some(yi), Some(xi)) = (yi, xi) {
        let mut m_xz = CondTable::default();
        for (o, p) in dist.atoms() {
            m_xz.add(&prepend(&[o.values()[xi]], &o.z()), p, o.values()[yi]);
        }
        let m_xz = Arc::new(m_xz);
        nuis.outcome_mean = Some(Arc::new(move |x: f64, z: &[f64]| {
            m_xz.mean(&prepend(&[x], z), "E(Y | X, Z)")
        }));
    }

    if let (Some(yi), Some(xi), Some(mi)) = (yi, xi, mi) {
        let mut b = CondTable::default();
        let mut cell = CondTable::default();
        let mut joint = CondTable::default();
        let mut support: Vec<f64> = Vec::new();
        for (o, p) in dist.atoms() {
            let v = o.values();
            let z = o.z();
            b.add(&prepend(&[v[mi], v[xi]], &z), p, v[yi]);
            cell.add(&prepend(&[v[xi]], &z), p, 1.0);
            joint.add(&prepend(&[v[mi], v[xi]], &z), p, 1.0);
            if !support.contains(&v[mi]) {
                support.push(v[mi]);
            }
        }
        support.sort_by(f64::total_cmp);
        nuis.mediator_support = support;
        let b = Arc::new(b);
        nuis.mediated_outcome = Some(Arc::new(move |m: f64, x: f64, z: &[f64]| {
            b.mean(&prepend(&[m, x], z), "E(Y | M, X, Z)")
        }));
        let (cell, joint) = (Arc::new(cell), Arc::new(joint));
        nuis.mediator_law = Some(Arc::new(move |m: f64, x: f64, z: &[f64]| {
            let c = cell.mass(&prepend(&[x], z));
            if c <= 0.0 {
                return Err(Error::Positivity(format!("no mass at X = {x}, Z = {z:?}")));
            }
            Ok(joint.mass(&prepend(&[m, x], z)) / c)
        }));
    }
    Ok(nuis)
}

fn binary_exposure(dist: &DiscreteDistribution) -> Result<()> {
    match dist.schema().exposure_kind() {
        Some(Kind::Binary) => Ok(()),
        Some(_) => Err(Error::Schema("this estimand needs a binary exposure".into())),
        None => Err(Error::Schema("no exposure column".into())),
    }
}

fn y_of(o: &Observation) -> f64 {
    o.values()[o.schema().outcome_index().expect("checked outcome")]
}

fn x_of(o: &Observation) -> f64 {
    o.values()[o.schema().exposure_index().expect("checked exposure")]
}

/// Exact `Ψ(dist)` by summation over the support.
pub fn plugin_value(spec: &EstimandSpec, dist: &DiscreteDistribution) -> Result<f64> {
    spec.validate()?;
    let schema = dist.schema();
    schema.require_outcome()?;
    let nuis = exact_nuisances(spec, dist)?;
    let moment = NuisanceSet::moment;
    match spec {
        EstimandSpec::PopulationMean => moment(nuis.moments.mean_y, "mean_y"),
        EstimandSpec::AverageDensity => {
            let mut seen: HashMap<AtomKey, f64> = HashMap::new();
            for (o, p) in dist.atoms() {
                *seen.entry(AtomKey::of(&[y_of(o)])).or_default() += p;
            }
            Ok(seen.values().map(|p| p * p).sum())
        }
        EstimandSpec::Covariance => {
            schema.require_exposure()?;
            let Moments { mean_y, mean_x, .. } = nuis.moments;
            let (my, mx) = (moment(mean_y, "mean_y")?, moment(mean_x, "mean_x")?);
            Ok(dist.expect(|o| (y_of(o) - my) * (x_of(o) - mx)))
        }
        EstimandSpec::PotentialOutcomeMean { level } => {
            binary_exposure(dist)?;
            dist.try_expect(|o| nuis.m(*level as f64, &o.z()))
        }
        EstimandSpec::Ate => {
            binary_exposure(dist)?;
            dist.try_expect(|o| Ok(nuis.m(1.0, &o.z())? - nuis.m(0.0, &o.z())?))
        }
        EstimandSpec::ExpectedConditionalCovariance => {
            schema.require_exposure()?;
            dist.try_expect(|o| {
                let z = o.z();
                Ok((y_of(o) - nuis.g_y(&z)?) * (x_of(o) - nuis.g_x(&z)?))
            })
        }
        EstimandSpec::PartiallyLinearCoefficient => {
            schema.require_exposure()?;
            let num = plugin_value(&EstimandSpec::ExpectedConditionalCovariance, dist)?;
            let den = moment(nuis.moments.residual_variance_x, "residual_variance_x")?;
            if den <= 1e-300 {
                return Err(Error::Positivity(
                    "X is a deterministic function of Z; E[(X - E(X|Z))^2] = 0".into(),
                ));
            }
            Ok(num / den)
        }
        EstimandSpec::AverageDerivativeEffect { .. } => Err(Error::Argument(
            "the average derivative effect needs a continuous exposure law; \
             it has no value on a finite-support law"
                .into(),
        )),
        EstimandSpec::Quantile { tau } => {
            let mut ys: Vec<(f64, f64)> = dist.atoms().map(|(o, p)| (y_of(o), p)).collect();
            ys.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut cdf = 0.0;
            for (y, p) in &ys {
                cdf += p;
                // tolerate rounding in the running sum
                if cdf >= tau - 1e-12 {
                    return Ok(*y);
                }
            }
            Ok(ys.last().map(|v| v.0).unwrap_or(f64::NAN))
        }
        EstimandSpec::TailConditionalExpectation { threshold } => {
            let f = moment(nuis.moments.tail_cdf, "tail_cdf")?;
            if f <= 0.0 {
                return Err(Error::Positivity(format!("P(Y <= {threshold}) = 0")));
            }
            Ok(dist.expect(|o| if y_of(o) <= *threshold { y_of(o) } else { 0.0 }) / f)
        }
        EstimandSpec::ConditionalCdf { y, x } => {
            schema.require_exposure()?;
            let px = moment(nuis.moments.exposure_cell_prob, "exposure_cell_prob")?;
            if px <= 0.0 {
                return Err(Error::Positivity(format!("P(X = {x}) = 0")));
            }
            Ok(dist.expect(|o| (x_of(o) == *x && y_of(o) <= *y) as u8 as f64) / px)
        }
        EstimandSpec::InterventionalDirectEffect { x1, x0 } => {
            binary_exposure(dist)?;
            schema.require_mediator()?;
            dist.try_expect(|o| mediator_average(&nuis, *x1 as f64, *x0 as f64, &o.z()))
        }
        EstimandSpec::IncrementalPropensity { odds_multiplier } => {
            binary_exposure(dist)?;
            dist.try_expect(|o| {
                let z = o.z();
                let (g1, g0) = incremental_weights(nuis.pi(&z)?, *odds_multiplier);
                Ok(g1 * nuis.m(1.0, &z)? + g0 * nuis.m(0.0, &z)?)
            })
        }
        EstimandSpec::DensityAtPoint { .. } | EstimandSpec::ConditionalMeanAt { .. } => {
            unreachable!("rejected by validate")
        }
    }
}
