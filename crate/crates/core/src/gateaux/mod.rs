//! Numerical checks of analytic influence functions.
//!
//! For a finite-support law `P` and contaminant `P̃` the path
//! `P_t = tP̃ + (1 − t)P` has
//!
//! * `dΨ(P_t)/dt` at `t = 0` equal to `E_P̃[φ(O, P)]`,
//! * `dΨ(P_t)/dt` at `t = 1` equal to `−E_P[φ(O, P̃)]`,
//!
//! and the von Mises remainder `R = −E_P[φ(O, P̃)] − (Ψ(P̃) − Ψ(P))` is
//! second order in `P̃ − P`. This module computes both sides of each.

mod random;
mod smooth;

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::distributions::{point_mass, AtomKey, DiscreteDistribution, MixturePath};
use crate::error::{Error, Result};
use crate::estimands::{eif_at, exact_nuisances, plugin_value, EstimandSpec, NuisanceSet};
use crate::seed::{derive_seed, rng_from};

pub use random::{dirichlet, oracle_schema, random_law, reweighted};
pub use smooth::{integrate, smooth_path_check, SmoothFamily};

const FIRST_STEP: f64 = 1e-2;
const MAX_HALVINGS: usize = 12;
const RICHARDSON_ORDER: usize = 4;
const CONVERGENCE_TOL: f64 = 1e-9;

/// Conditioning cells lighter than this make the check meaningless.
pub const SKIP_MASS: f64 = 1e-6;
/// Cells lighter than this are reported as flagged.
pub const FLAG_MASS: f64 = 1e-2;

/// Which identity a report checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Identity {
    /// `dΨ/dt(0) = E_P̃[φ(O, P)]`
    AtZero,
    /// `dΨ/dt(1) = −E_P[φ(O, P̃)]`
    AtOne,
    /// `t = 0` identity along a smooth (density) path.
    Smooth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateauxReport {
    pub spec: EstimandSpec,
    pub identity: Identity,
    pub contaminant: String,
    pub numerical_derivative: f64,
    pub analytic_value: f64,
    pub abs_error: f64,
    /// `abs_error / max(1, |analytic_value|)`
    pub rel_error: f64,
    pub steps: Vec<f64>,
    pub min_conditioning_mass: f64,
    pub flagged: bool,
    /// Set when a conditioning cell is below [`SKIP_MASS`]; the numeric
    /// fields are then NaN.
    pub skipped: bool,
}

impl GateauxReport {
    fn new(
        spec: &EstimandSpec,
        identity: Identity,
        contaminant: String,
        numerical: Derivative,
        analytic_value: f64,
        mass: f64,
    ) -> Self {
        let abs_error = (numerical.value - analytic_value).abs();
        GateauxReport {
            spec: spec.clone(),
            identity,
            contaminant,
            numerical_derivative: numerical.value,
            analytic_value,
            abs_error,
            rel_error: abs_error / analytic_value.abs().max(1.0),
            steps: numerical.steps,
            min_conditioning_mass: mass,
            flagged: mass < FLAG_MASS,
            skipped: false,
        }
    }

    fn skipped(spec: &EstimandSpec, identity: Identity, contaminant: String, mass: f64) -> Self {
        GateauxReport {
            spec: spec.clone(),
            identity,
            contaminant,
            numerical_derivative: f64::NAN,
            analytic_value: f64::NAN,
            abs_error: f64::NAN,
            rel_error: f64::NAN,
            steps: vec![],
            min_conditioning_mass: mass,
            flagged: true,
            skipped: true,
        }
    }

    /// Skipped reports count as passing; callers that care inspect `skipped`.
    pub fn passes(&self, tolerance: f64) -> bool {
        self.skipped || self.rel_error <= tolerance
    }
}

/// A one-sided derivative and the step sizes it used.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivative {
    pub value: f64,
    pub steps: Vec<f64>,
}

/// One-sided derivative of `f` on `[0, 1]`, at `t = 0` (forward) or at
/// `t = 1` (backward). Steps start at 1e-2 and halve; the difference
/// quotients are Richardson-extrapolated to order 4. Converged once two
/// successive extrapolants agree to 1e-9 relative (to `max(1, |value|)`).
pub fn one_sided_derivative(f: impl Fn(f64) -> Result<f64>, at_one: bool) -> Result<Derivative> {
    one_sided_derivative_from(f, at_one, FIRST_STEP)
}

/// As [`one_sided_derivative`] with the first step capped at `first_step`.
///
/// Along a mixture path a conditioning cell of mass `p` makes `Ψ(P_t)`
/// bend on the scale `t ≈ p`, so steps must start below `p` to reach the
/// asymptotic regime within twelve halvings.
pub fn one_sided_derivative_from(
    f: impl Fn(f64) -> Result<f64>,
    at_one: bool,
    first_step: f64,
) -> Result<Derivative> {
    let anchor = f(if at_one { 1.0 } else { 0.0 })?;
    let mut prev_row: Vec<f64> = Vec::new();
    let mut steps = Vec::new();
    let mut h = first_step.min(FIRST_STEP);
    for i in 0..=MAX_HALVINGS {
        let d = if at_one {
            (anchor - f(1.0 - h)?) / h
        } else {
            (f(h)? - anchor) / h
        };
        steps.push(h);
        let mut row = vec![d];
        for j in 1..=i.min(RICHARDSON_ORDER - 1) {
            let scale = (1u32 << j) as f64 - 1.0;
            row.push(row[j - 1] + (row[j - 1] - prev_row[j - 1]) / scale);
        }
        let best = *row.last().expect("non-empty row");
        if let Some(&prev_best) = prev_row.last() {
            if !best.is_finite() {
                break;
            }
            if (best - prev_best).abs() <= CONVERGENCE_TOL * best.abs().max(1.0) {
                return Ok(Derivative { value: best, steps });
            }
        }
        prev_row = row;
        h /= 2.0;
    }
    Err(Error::DerivativeUnstable(format!(
        "Richardson extrapolants did not settle after {MAX_HALVINGS} halvings (last step {:e})",
        steps.last().copied().unwrap_or(FIRST_STEP)
    )))
}

/// `dΨ(P_t)/dt` at `t = 0` along the mixture path from `p` towards `p_tilde`.
pub fn numerical_gateaux(
    spec: &EstimandSpec,
    p: &DiscreteDistribution,
    p_tilde: &DiscreteDistribution,
) -> Result<Derivative> {
    let path = MixturePath::new(p.clone(), p_tilde.clone())?;
    let first = min_conditioning_mass(spec, p);
    one_sided_derivative_from(|t| plugin_value(spec, &path.at(t)?), false, first)
}

fn cell_masses(dist: &DiscreteDistribution, cols: &[usize]) -> HashMap<AtomKey, f64> {
    let mut out: HashMap<AtomKey, f64> = HashMap::new();
    for (o, p) in dist.atoms() {
        let key: Vec<f64> = cols.iter().map(|&c| o.values()[c]).collect();
        *out.entry(AtomKey::of(&key)).or_default() += p;
    }
    out
}

/// Lightest probability among the cells `spec` conditions on, 1 for
/// estimands without conditioning. For a binary exposure every `(x, z)`
/// pair counts, observed or not.
pub fn min_conditioning_mass(spec: &EstimandSpec, dist: &DiscreteDistribution) -> f64 {
    let schema = dist.schema();
    let z = schema.covariate_indices().to_vec();
    let lightest = |cols: Vec<usize>| {
        cell_masses(dist, &cols).values().copied().fold(1.0, f64::min)
    };
    let exposure_cells = || -> f64 {
        let Some(xi) = schema.exposure_index() else {
            return 0.0;
        };
        let zcells = cell_masses(dist, &z);
        let mut xz = vec![xi];
        xz.extend(&z);
        let joint = cell_masses(dist, &xz);
        let mut min = 1.0f64;
        for (o, _) in dist.atoms() {
            let zv: Vec<f64> = z.iter().map(|&c| o.values()[c]).collect();
            debug_assert!(zcells.contains_key(&AtomKey::of(&zv)));
            for x in [0.0, 1.0] {
                let mut k = vec![x];
                k.extend(&zv);
                min = min.min(joint.get(&AtomKey::of(&k)).copied().unwrap_or(0.0));
            }
        }
        min
    };
    match spec {
        EstimandSpec::PotentialOutcomeMean { .. }
        | EstimandSpec::Ate
        | EstimandSpec::IncrementalPropensity { .. } => exposure_cells(),
        EstimandSpec::InterventionalDirectEffect { .. } => {
            let (Some(xi), Some(mi)) = (schema.exposure_index(), schema.mediator_index()) else {
                return 0.0;
            };
            let mut mxz = vec![mi, xi];
            mxz.extend(&z);
            exposure_cells().min(lightest(mxz))
        }
        EstimandSpec::ExpectedConditionalCovariance | EstimandSpec::PartiallyLinearCoefficient => {
            lightest(z)
        }
        EstimandSpec::ConditionalCdf { x, .. } => match schema.exposure_index() {
            Some(xi) => dist.expect(|o| (o.values()[xi] == *x) as u8 as f64),
            None => 0.0,
        },
        EstimandSpec::TailConditionalExpectation { threshold } => match schema.outcome_index() {
            Some(yi) => dist.expect(|o| (o.values()[yi] <= *threshold) as u8 as f64),
            None => 0.0,
        },
        _ => 1.0,
    }
}

/// Point masses at every support atom of `p`, labelled by atom index.
pub fn atom_contaminants(p: &DiscreteDistribution) -> Vec<(String, DiscreteDistribution)> {
    p.support()
        .iter()
        .enumerate()
        .map(|(i, o)| (format!("point_mass[{i}]"), point_mass(o)))
        .collect()
}

/// Compares the numerical derivative at `t = 0` with `E_P̃[φ(O, P)]` for each
/// contaminant. Contaminants must live on the support of `p` for
/// conditional estimands.
pub fn verify_eif(
    spec: &EstimandSpec,
    p: &DiscreteDistribution,
    contaminants: &[(String, DiscreteDistribution)],
) -> Result<Vec<GateauxReport>> {
    let mass = min_conditioning_mass(spec, p);
    if mass < SKIP_MASS {
        return Ok(contaminants
            .iter()
            .map(|(label, _)| GateauxReport::skipped(spec, Identity::AtZero, label.clone(), mass))
            .collect());
    }
    let nuis = exact_nuisances(spec, p)?;
    let psi = plugin_value(spec, p)?;
    contaminants
        .iter()
        .map(|(label, q)| {
            let analytic = q.try_expect(|o| eif_at(spec, o, &nuis, psi))?;
            let numerical = numerical_gateaux(spec, p, q)?;
            Ok(GateauxReport::new(spec, Identity::AtZero, label.clone(), numerical, analytic, mass))
        })
        .collect()
}

/// Compares `dΨ(P_t)/dt` at `t = 1` with `−E_P[φ(O, P̃)]`, nuisances taken
/// from `p_tilde`.
pub fn check_t1_identity(
    spec: &EstimandSpec,
    p: &DiscreteDistribution,
    p_tilde: &DiscreteDistribution,
    label: &str,
) -> Result<GateauxReport> {
    let mass = min_conditioning_mass(spec, p).min(min_conditioning_mass(spec, p_tilde));
    if mass < SKIP_MASS {
        return Ok(GateauxReport::skipped(spec, Identity::AtOne, label.into(), mass));
    }
    let nuis = exact_nuisances(spec, p_tilde)?;
    let psi_tilde = plugin_value(spec, p_tilde)?;
    let analytic = -p.try_expect(|o| eif_at(spec, o, &nuis, psi_tilde))?;
    let path = MixturePath::new(p.clone(), p_tilde.clone())?;
    let numerical = one_sided_derivative_from(|t| plugin_value(spec, &path.at(t)?), true, mass)?;
    Ok(GateauxReport::new(spec, Identity::AtOne, label.into(), numerical, analytic, mass))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemainderReport {
    pub spec: EstimandSpec,
    pub psi_p: f64,
    pub psi_ptilde: f64,
    /// `−E_P[φ(O, P̃)]`
    pub drift_term: f64,
    /// `drift_term − (psi_ptilde − psi_p)`
    pub remainder: f64,
}

/// Exact von Mises remainder `R(P, P̃)` on finite-support laws.
pub fn von_mises_remainder(
    spec: &EstimandSpec,
    p: &DiscreteDistribution,
    p_tilde: &DiscreteDistribution,
) -> Result<RemainderReport> {
    let nuis = exact_nuisances(spec, p_tilde)?;
    let psi_tilde = plugin_value(spec, p_tilde)?;
    von_mises_remainder_with(spec, p, &nuis, psi_tilde)
}

/// Remainder with caller-supplied nuisances standing in for `P̃`.
pub fn von_mises_remainder_with(
    spec: &EstimandSpec,
    p: &DiscreteDistribution,
    nuis_tilde: &NuisanceSet,
    psi_tilde: f64,
) -> Result<RemainderReport> {
    let psi_p = plugin_value(spec, p)?;
    let drift_term = -p.try_expect(|o| eif_at(spec, o, nuis_tilde, psi_tilde))?;
    Ok(RemainderReport {
        spec: spec.clone(),
        psi_p,
        psi_ptilde: psi_tilde,
        drift_term,
        remainder: drift_term - (psi_tilde - psi_p),
    })
}

/// ATE remainder when the outcome regression comes from `p_tilde` but the
/// propensity is the true one of `p`.
pub fn ate_remainder_true_propensity(
    p: &DiscreteDistribution,
    p_tilde: &DiscreteDistribution,
) -> Result<RemainderReport> {
    let spec = EstimandSpec::Ate;
    let mut nuis = exact_nuisances(&spec, p_tilde)?;
    nuis.propensity = exact_nuisances(&spec, p)?.propensity;
    let psi_tilde = plugin_value(&spec, p_tilde)?;
    von_mises_remainder_with(&spec, p, &nuis, psi_tilde)
}

/// Cauchy–Schwarz bound on the ATE remainder, summed over both arms:
/// `Σ_x √E_P[(π_x/π̃_x − 1)²] · √E_P[(m_x − m̃_x)²]`.
pub fn ate_remainder_bound(p: &DiscreteDistribution, p_tilde: &DiscreteDistribution) -> Result<f64> {
    let spec = EstimandSpec::Ate;
    let n = exact_nuisances(&spec, p)?;
    let nt = exact_nuisances(&spec, p_tilde)?;
    let mut bound = 0.0;
    for x in [0.0, 1.0] {
        let a = p.try_expect(|o| {
            let z = o.z();
            let r = n.pi_at(x, &z)? / nt.pi_at(x, &z)? - 1.0;
            Ok(r * r)
        })?;
        let b = p.try_expect(|o| {
            let z = o.z();
            let r = n.m(x, &z)? - nt.m(x, &z)?;
            Ok(r * r)
        })?;
        bound += a.sqrt() * b.sqrt();
    }
    Ok(bound)
}

/// Number of same-support reweighted contaminants drawn per random law.
pub const REWEIGHTED_PER_LAW: usize = 3;

/// `t = 0` sweep: `trials` random laws (trial `r` seeded by
/// `derive_seed(seed, r)`), each contaminated by every atom point mass and
/// [`REWEIGHTED_PER_LAW`] reweighted laws, for every spec.
pub fn eif_sweep(
    specs: &[EstimandSpec],
    trials: usize,
    max_support: usize,
    seed: u64,
) -> Result<Vec<GateauxReport>> {
    let per_trial = (0..trials as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from(derive_seed(seed, r));
            let p = random_law(max_support, &mut rng)?;
            let mut contaminants = atom_contaminants(&p);
            for k in 0..REWEIGHTED_PER_LAW {
                contaminants.push((format!("reweighted[{k}]"), reweighted(&p, &mut rng)?));
            }
            let mut out = Vec::new();
            for spec in specs {
                let mut reports = verify_eif(spec, &p, &contaminants)?;
                for rep in &mut reports {
                    rep.contaminant = format!("trial {r}: {}", rep.contaminant);
                }
                out.extend(reports);
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}

/// Number of contaminants per law in the `t = 1` sweep.
pub const T1_CONTAMINANTS_PER_LAW: usize = 5;

/// `t = 1` sweep. Contaminants are reweightings of the base support: the
/// identity evaluates nuisances of `P̃` at every atom of `P`, which a point
/// mass cannot supply for conditional estimands.
pub fn t1_sweep(
    specs: &[EstimandSpec],
    trials: usize,
    max_support: usize,
    seed: u64,
) -> Result<Vec<GateauxReport>> {
    let per_trial = (0..trials as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_from(derive_seed(seed, r));
            let p = random_law(max_support, &mut rng)?;
            let tildes = (0..T1_CONTAMINANTS_PER_LAW)
                .map(|_| reweighted(&p, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            let mut out = Vec::new();
            for spec in specs {
                for (k, q) in tildes.iter().enumerate() {
                    out.push(check_t1_identity(spec, &p, q, &format!("trial {r}: reweighted[{k}]"))?);
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(per_trial.into_iter().flatten().collect())
}
