use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::folds::FoldPlan;
use crate::distributions::{Dataset, Kind, Observation};
use crate::error::{Error, Result};
use crate::estimands::{nuisance_requirements, EstimandSpec, NuisanceSet, NuisanceSlot};
use crate::learners::{
    fit_kde, fit_kernel_regression, fit_logistic, fit_ols, Bandwidth, DensityFit, FeatureMap,
    RegressionFit,
};

pub const DEFAULT_TRIM: f64 = 0.01;
/// Trapezoid points for `∫f̂²` over the sample range ± 5h.
pub const DENSITY_GRID_POINTS: usize = 4096;

/// A learner and its tuning for one nuisance slot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "snake_case")]
pub enum Learner {
    Ols { ridge_lambda: f64, feature_map: FeatureMap },
    Logistic { ridge_lambda: f64, feature_map: FeatureMap },
    /// Nadaraya–Watson regression.
    Kernel { bandwidth: Bandwidth },
    /// Kernel density estimate.
    Kde { bandwidth: Bandwidth },
}

impl Learner {
    pub fn name(&self) -> &'static str {
        match self {
            Learner::Ols { .. } => "ols",
            Learner::Logistic { .. } => "logistic",
            Learner::Kernel { .. } => "kernel",
            Learner::Kde { .. } => "kde",
        }
    }

    /// The named learner with default tuning.
    pub fn from_name(name: &str) -> Option<Learner> {
        Some(match name {
            "ols" => Learner::Ols {
                ridge_lambda: 0.0,
                feature_map: FeatureMap::default(),
            },
            "logistic" => Learner::Logistic {
                ridge_lambda: 0.0,
                feature_map: FeatureMap::default(),
            },
            "kernel" => Learner::Kernel {
                bandwidth: Bandwidth::Auto,
            },
            "kde" => Learner::Kde {
                bandwidth: Bandwidth::Auto,
            },
            _ => return None,
        })
    }

    /// Whether this learner can fill `slot`.
    pub fn fits(&self, slot: NuisanceSlot) -> bool {
        use NuisanceSlot::*;
        match slot {
            OutcomeMean | ConditionalMeanY | ConditionalMeanX | MediatedOutcome => {
                matches!(self, Learner::Ols { .. } | Learner::Kernel { .. })
            }
            Propensity | MediatorLaw => matches!(self, Learner::Logistic { .. } | Learner::Kernel { .. }),
            MarginalDensity | JointDensity | DensityAtQuantile => matches!(self, Learner::Kde { .. }),
        }
    }
}

/// Learners per nuisance slot plus the propensity trim level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerConfig {
    pub slots: BTreeMap<NuisanceSlot, Learner>,
    pub trim: f64,
}

impl LearnerConfig {
    /// OLS for regressions, logistic for probabilities, KDE for densities.
    pub fn defaults(spec: &EstimandSpec) -> Result<Self> {
        let slots = nuisance_requirements(spec)?
            .into_iter()
            .map(|slot| {
                let name = match slot {
                    NuisanceSlot::Propensity | NuisanceSlot::MediatorLaw => "logistic",
                    NuisanceSlot::MarginalDensity
                    | NuisanceSlot::JointDensity
                    | NuisanceSlot::DensityAtQuantile => "kde",
                    _ => "ols",
                };
                (slot, Learner::from_name(name).expect("known learner"))
            })
            .collect();
        Ok(LearnerConfig {
            slots,
            trim: DEFAULT_TRIM,
        })
    }

    /// Same learner for every regression and probability slot.
    pub fn with(mut self, slot: NuisanceSlot, learner: Learner) -> Self {
        self.slots.insert(slot, learner);
        self
    }

    pub fn validate(&self, spec: &EstimandSpec) -> Result<()> {
        if !(self.trim >= 0.0 && self.trim < 0.5) {
            return Err(Error::Argument(format!("trim must lie in [0, 0.5), got {}", self.trim)));
        }
        for slot in nuisance_requirements(spec)? {
            match self.slots.get(&slot) {
                None => {
                    return Err(Error::Nuisance(format!(
                        "{spec} needs a learner for `{slot}`"
                    )))
                }
                Some(l) if !l.fits(slot) => {
                    return Err(Error::Argument(format!(
                        "learner `{}` cannot fit `{slot}`",
                        l.name()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

/// Per-fold nuisance sets; row `i` is evaluated with `sets[plan.fold_of(i)]`.
#[derive(Debug, Clone)]
pub struct CrossFit {
    pub plan: FoldPlan,
    pub sets: Vec<NuisanceSet>,
    /// Rows whose raw propensity fell outside `[trim, 1 − trim]`.
    pub trim_count: usize,
    /// `∫f̂²` of each fold's marginal density fit, when one was fitted.
    pub integral_f_squared: Vec<Option<f64>>,
}

impl CrossFit {
    /// Wraps fixed nuisances (for instance the true ones) for every row.
    pub fn fixed(plan: FoldPlan, nuis: NuisanceSet) -> CrossFit {
        CrossFit {
            sets: vec![nuis; plan.k],
            integral_f_squared: vec![None; plan.k],
            plan,
            trim_count: 0,
        }
    }

    pub fn for_row(&self, row: usize) -> &NuisanceSet {
        &self.sets[self.plan.fold_of(row)]
    }
}

fn fit_regression(learner: &Learner, x: &[Vec<f64>], y: &[f64]) -> Result<RegressionFit> {
    match learner {
        Learner::Ols {
            ridge_lambda,
            feature_map,
        } => fit_ols(x, y, *ridge_lambda, feature_map),
        Learner::Kernel { bandwidth } => fit_kernel_regression(x, y, bandwidth),
        other => Err(Error::Argument(format!("`{}` is not a regression learner", other.name()))),
    }
}

fn fit_probability(learner: &Learner, x: &[Vec<f64>], labels: &[f64]) -> Result<RegressionFit> {
    match learner {
        Learner::Logistic {
            ridge_lambda,
            feature_map,
        } => fit_logistic(x, labels, *ridge_lambda, feature_map),
        Learner::Kernel { bandwidth } => fit_kernel_regression(x, labels, bandwidth),
        other => Err(Error::Argument(format!("`{}` is not a probability learner", other.name()))),
    }
}

fn fit_density(learner: &Learner, sample: &[Vec<f64>]) -> Result<DensityFit> {
    match learner {
        Learner::Kde { bandwidth } => fit_kde(sample, bandwidth),
        other => Err(Error::Argument(format!("`{}` is not a density learner", other.name()))),
    }
}

/// Caches a fitted function by the bit pattern of its inputs. Estimators
/// read the same rows several times (plug-in, then φ at two values of ψ), so
/// this saves most of the cost of kernel fits.
fn memoize(f: impl Fn(&[f64]) -> Result<f64> + Send + Sync + 'static) -> impl Fn(&[f64]) -> Result<f64> + Send + Sync {
    let cache: Mutex<HashMap<Vec<u64>, f64>> = Mutex::new(HashMap::new());
    move |x: &[f64]| {
        let key: Vec<u64> = x.iter().map(|v| v.to_bits()).collect();
        if let Some(v) = cache.lock().expect("cache lock").get(&key) {
            return Ok(*v);
        }
        let v = f(x)?;
        cache.lock().expect("cache lock").insert(key, v);
        Ok(v)
    }
}

fn cached_fit(fit: Arc<RegressionFit>) -> impl Fn(&[f64]) -> Result<f64> + Send + Sync {
    memoize(move |x: &[f64]| fit.predict(x))
}

fn with_head(head: &[f64], z: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(head.len() + z.len());
    v.extend_from_slice(head);
    v.extend_from_slice(z);
    v
}

struct Columns {
    y: Option<usize>,
    x: Option<usize>,
    m: Option<usize>,
}

fn need(idx: Option<usize>, role: &str, slot: NuisanceSlot) -> Result<usize> {
    idx.ok_or_else(|| Error::Schema(format!("nuisance `{slot}` needs a column with role {role}")))
}

/// Raw (unclipped) propensity of a fold.
type RawPropensity = Arc<dyn Fn(&[f64]) -> Result<f64> + Send + Sync>;

fn fit_fold(
    spec: &EstimandSpec,
    rows: &[&Observation],
    config: &LearnerConfig,
    cols: &Columns,
    binary_exposure: bool,
) -> Result<(NuisanceSet, Option<RawPropensity>, Option<f64>)> {
    let mut nuis = NuisanceSet::default();
    let mut raw_propensity = None;
    let mut int_f2 = None;
    let z: Vec<Vec<f64>> = rows.iter().map(|o| o.z()).collect();
    let col = |i: usize| -> Vec<f64> { rows.iter().map(|o| o.values()[i]).collect() };
    let n = rows.len() as f64;

    if let Some(yi) = cols.y {
        let y = col(yi);
        nuis.moments.mean_y = Some(y.iter().sum::<f64>() / n);
        if let EstimandSpec::TailConditionalExpectation { threshold } = *spec {
            nuis.moments.tail_cdf = Some(y.iter().filter(|&&v| v <= threshold).count() as f64 / n);
        }
    }
    if let Some(xi) = cols.x {
        let x = col(xi);
        nuis.moments.mean_x = Some(x.iter().sum::<f64>() / n);
        if let EstimandSpec::ConditionalCdf { x: level, .. } = *spec {
            nuis.moments.exposure_cell_prob = Some(x.iter().filter(|&&v| v == level).count() as f64 / n);
        }
    }

    for slot in nuisance_requirements(spec)? {
        let learner = &config.slots[&slot];
        match slot {
            NuisanceSlot::OutcomeMean => {
                let yi = need(cols.y, "outcome", slot)?;
                let xi = need(cols.x, "exposure", slot)?;
                if binary_exposure {
                    let mut arms = Vec::new();
                    for level in [0.0, 1.0] {
                        let idx: Vec<usize> = (0..rows.len()).filter(|&i| rows[i].values()[xi] == level).collect();
                        if idx.is_empty() {
                            return Err(Error::Positivity(format!("no training rows with exposure {level}")));
                        }
                        let f: Vec<Vec<f64>> = idx.iter().map(|&i| z[i].clone()).collect();
                        let t: Vec<f64> = idx.iter().map(|&i| rows[i].values()[yi]).collect();
                        arms.push(cached_fit(Arc::new(fit_regression(learner, &f, &t)?)));
                    }
                    nuis.outcome_mean = Some(Arc::new(move |x: f64, z: &[f64]| {
                        if x == 0.0 {
                            arms[0](z)
                        } else if x == 1.0 {
                            arms[1](z)
                        } else {
                            Err(Error::Argument(format!("binary exposure level {x}")))
                        }
                    }));
                } else {
                    let f: Vec<Vec<f64>> = rows.iter().map(|o| with_head(&[o.values()[xi]], &o.z())).collect();
                    let g = Arc::new(fit_regression(learner, &f, &col(yi))?);
                    let fit = cached_fit(g.clone());
                    nuis.outcome_mean = Some(Arc::new(move |x: f64, z: &[f64]| fit(&with_head(&[x], z))));
                    nuis.outcome_mean_grad =
                        Some(Arc::new(move |x: f64, z: &[f64]| g.predict_grad(&with_head(&[x], z), 0)));
                }
            }
            NuisanceSlot::Propensity => {
                let xi = need(cols.x, "exposure", slot)?;
                if !binary_exposure {
                    return Err(Error::Schema("a propensity needs a binary exposure".into()));
                }
                let fit = Arc::new(fit_probability(learner, &z, &col(xi))?);
                let trim = config.trim;
                let raw: RawPropensity = Arc::new(cached_fit(fit));
                let r = raw.clone();
                nuis.propensity = Some(Arc::new(move |z: &[f64]| Ok(r(z)?.clamp(trim, 1.0 - trim))));
                raw_propensity = Some(raw);
            }
            NuisanceSlot::ConditionalMeanY | NuisanceSlot::ConditionalMeanX => {
                let target = if slot == NuisanceSlot::ConditionalMeanY {
                    need(cols.y, "outcome", slot)?
                } else {
                    need(cols.x, "exposure", slot)?
                };
                let fit = Arc::new(fit_regression(learner, &z, &col(target))?);
                if slot == NuisanceSlot::ConditionalMeanX {
                    let mut ss = 0.0;
                    for (o, zi) in rows.iter().zip(&z) {
                        let r = o.values()[target] - fit.predict(zi)?;
                        ss += r * r;
                    }
                    nuis.moments.residual_variance_x = Some(ss / n);
                }
                let g: crate::estimands::CovariateFn = Arc::new(cached_fit(fit));
                if slot == NuisanceSlot::ConditionalMeanY {
                    nuis.conditional_mean_y = Some(g);
                } else {
                    nuis.conditional_mean_x = Some(g);
                }
            }
            NuisanceSlot::MarginalDensity | NuisanceSlot::DensityAtQuantile => {
                let yi = need(cols.y, "outcome", slot)?;
                let sample: Vec<Vec<f64>> = rows.iter().map(|o| vec![o.values()[yi]]).collect();
                let fit = Arc::new(fit_density(learner, &sample)?);
                if slot == NuisanceSlot::MarginalDensity {
                    int_f2 = Some(fit.integral_of_square(DENSITY_GRID_POINTS)?);
                }
                let f = memoize(move |y: &[f64]| fit.density_at(y));
                let f: crate::estimands::ScalarFn = Arc::new(move |y: f64| f(&[y]));
                if slot == NuisanceSlot::MarginalDensity {
                    nuis.marginal_density = Some(f);
                } else {
                    nuis.density_at_quantile = Some(f);
                }
            }
            NuisanceSlot::JointDensity => {
                let xi = need(cols.x, "exposure", slot)?;
                let sample: Vec<Vec<f64>> = rows.iter().map(|o| with_head(&[o.values()[xi]], &o.z())).collect();
                let fit = Arc::new(fit_density(learner, &sample)?);
                let g = fit.clone();
                nuis.joint_density = Some(Arc::new(move |x: f64, z: &[f64]| fit.density_at(&with_head(&[x], z))));
                nuis.joint_density_grad =
                    Some(Arc::new(move |x: f64, z: &[f64]| g.density_grad_at(&with_head(&[x], z), 0)));
            }
            NuisanceSlot::MediatorLaw => {
                let xi = need(cols.x, "exposure", slot)?;
                let mi = need(cols.m, "mediator", slot)?;
                let mut levels: Vec<f64> = Vec::new();
                for o in rows {
                    let v = o.values()[mi];
                    if !levels.contains(&v) {
                        levels.push(v);
                    }
                }
                levels.sort_by(f64::total_cmp);
                let f: Vec<Vec<f64>> = rows.iter().map(|o| with_head(&[o.values()[xi]], &o.z())).collect();
                // one-vs-rest fits, renormalised; two levels need a single fit
                let fitted_levels = if levels.len() == 2 { &levels[1..] } else { &levels[..] };
                let fits = fitted_levels
                    .iter()
                    .map(|&level| {
                        let labels: Vec<f64> = rows.iter().map(|o| (o.values()[mi] == level) as u8 as f64).collect();
                        fit_probability(learner, &f, &labels)
                    })
                    .collect::<Result<Vec<_>>>()?;
                let (fits, lv) = (Arc::new(fits), levels.clone());
                nuis.mediator_law = Some(Arc::new(move |m: f64, x: f64, z: &[f64]| {
                    let Some(idx) = lv.iter().position(|&v| v == m) else {
                        return Ok(0.0);
                    };
                    let feat = with_head(&[x], z);
                    if lv.len() == 1 {
                        return Ok(1.0);
                    }
                    if lv.len() == 2 {
                        let p1 = fits[0].predict(&feat)?.clamp(0.0, 1.0);
                        return Ok(if idx == 1 { p1 } else { 1.0 - p1 });
                    }
                    let ps = fits
                        .iter()
                        .map(|f| Ok(f.predict(&feat)?.max(0.0)))
                        .collect::<Result<Vec<f64>>>()?;
                    let total: f64 = ps.iter().sum();
                    if total <= 0.0 {
                        return Err(Error::Positivity("mediator law vanishes".into()));
                    }
                    Ok(ps[idx] / total)
                }));
                nuis.mediator_support = levels;
            }
            NuisanceSlot::MediatedOutcome => {
                let yi = need(cols.y, "outcome", slot)?;
                let xi = need(cols.x, "exposure", slot)?;
                let mi = need(cols.m, "mediator", slot)?;
                let f: Vec<Vec<f64>> = rows
                    .iter()
                    .map(|o| with_head(&[o.values()[mi], o.values()[xi]], &o.z()))
                    .collect();
                let fit = cached_fit(Arc::new(fit_regression(learner, &f, &col(yi))?));
                nuis.mediated_outcome = Some(Arc::new(move |m: f64, x: f64, z: &[f64]| fit(&with_head(&[m, x], z))));
            }
        }
    }
    Ok((nuis, raw_propensity, int_f2))
}

/// Fits every nuisance `spec` needs once per fold, on that fold's training
/// rows. Failures are tagged with the fold index.
pub fn fit_cross_fitted_nuisances(
    data: &Dataset,
    spec: &EstimandSpec,
    config: &LearnerConfig,
    plan: &FoldPlan,
) -> Result<CrossFit> {
    spec.validate()?;
    config.validate(spec)?;
    if plan.n != data.n() {
        return Err(Error::Argument(format!(
            "fold plan covers {} rows, dataset has {}",
            plan.n,
            data.n()
        )));
    }
    let schema = data.schema();
    let cols = Columns {
        y: schema.outcome_index(),
        x: schema.exposure_index(),
        m: schema.mediator_index(),
    };
    let binary = schema.exposure_kind() == Some(Kind::Binary);
    let mut sets = Vec::with_capacity(plan.k);
    let mut raws = Vec::with_capacity(plan.k);
    let mut integral_f_squared = Vec::with_capacity(plan.k);
    for fold in 0..plan.k {
        let rows: Vec<&Observation> = plan.train_rows(fold).into_iter().map(|i| &data.rows()[i]).collect();
        let (set, raw, f2) = fit_fold(spec, &rows, config, &cols, binary).map_err(|e| Error::Fitting {
            fold,
            source: Box::new(e),
        })?;
        sets.push(set);
        raws.push(raw);
        integral_f_squared.push(f2);
    }
    let mut trim_count = 0;
    for (i, row) in data.rows().iter().enumerate() {
        if let Some(raw) = &raws[plan.fold_of(i)] {
            let p = raw(&row.z()).map_err(|e| Error::Fitting {
                fold: plan.fold_of(i),
                source: Box::new(e),
            })?;
            if p < config.trim || p > 1.0 - config.trim {
                trim_count += 1;
            }
        }
    }
    Ok(CrossFit {
        plan: plan.clone(),
        sets,
        trim_count,
        integral_f_squared,
    })
}
