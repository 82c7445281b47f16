//! Monte Carlo experiments on synthetic data with known truth.
//!
//! Replication `r` of a run with master seed `s` draws its data from
//! `derive_seed(s, r)` and its folds from `derive_seed(derive_seed(s, r), 0)`,
//! so any single replication can be re-run on its own. Replications run on
//! the rayon pool and are reduced in index order.

mod dgp;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimands::EstimandSpec;
use crate::estimation::{estimate, fit_cross_fitted_nuisances, make_folds, EstimateReport, LearnerConfig, Method};
use crate::seed::derive_seed;

pub use dgp::{Arm, Dgp, Truth, N_ORACLE};

/// Largest tolerated share of failed replications.
pub const MAX_EXCLUDED_SHARE: f64 = 0.01;

/// Sample size, replication count and the shared estimation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunPlan {
    pub n: usize,
    pub reps: usize,
    pub folds: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Monte Carlo draws for truths without a closed form.
    pub oracle_size: usize,
}

impl RunPlan {
    pub fn new(n: usize, reps: usize, seed: u64) -> RunPlan {
        RunPlan {
            n,
            reps,
            folds: 5,
            seed,
            alpha: 0.05,
            oracle_size: N_ORACLE,
        }
    }

    pub fn replication_seed(&self, r: usize) -> u64 {
        derive_seed(self.seed, r as u64)
    }

    /// Seed of the truth oracle, disjoint from every replication seed.
    pub fn oracle_seed(&self) -> u64 {
        derive_seed(self.seed ^ 0x6f72_6163_6c65, u64::MAX)
    }
}

/// Aggregate performance of one estimator over the replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dgp: String,
    pub spec: EstimandSpec,
    pub method: Method,
    pub arm: Option<Arm>,
    pub n: usize,
    pub folds: usize,
    pub replications: usize,
    pub completed: usize,
    pub excluded: usize,
    pub truth: f64,
    pub truth_mc_se: Option<f64>,
    pub mean_estimate: f64,
    pub bias: f64,
    /// `empirical_sd/√R`.
    pub bias_mc_se: Option<f64>,
    pub empirical_sd: Option<f64>,
    pub mean_se: f64,
    /// `mean_se / empirical_sd`.
    pub se_ratio: Option<f64>,
    pub coverage: f64,
    /// `√(c(1 − c)/R)`.
    pub coverage_mc_se: f64,
    pub rmse: f64,
    pub mean_runtime_secs: f64,
    /// Largest `|mean φ|` at the final estimate over the replications.
    pub max_abs_post_condition: f64,
    pub first_error: Option<String>,
    pub estimates: Vec<f64>,
    pub ses: Vec<f64>,
}

impl MetricsReport {
    /// Aggregates completed replications, `None` marking failed ones.
    pub fn aggregate(
        dgp: &Dgp,
        spec: &EstimandSpec,
        method: Method,
        arm: Option<Arm>,
        plan: &RunPlan,
        truth: Truth,
        runs: &[std::result::Result<(EstimateReport, f64), String>],
    ) -> Result<MetricsReport> {
        let ok: Vec<&(EstimateReport, f64)> = runs.iter().filter_map(|r| r.as_ref().ok()).collect();
        let excluded = runs.len() - ok.len();
        let first_error = runs.iter().find_map(|r| r.as_ref().err().cloned());
        if ok.is_empty() || excluded as f64 > MAX_EXCLUDED_SHARE * runs.len() as f64 {
            return Err(Error::Solver(format!(
                "{excluded} of {} replications of {method} failed; first error: {}",
                runs.len(),
                first_error.unwrap_or_default()
            )));
        }
        let r = ok.len() as f64;
        let estimates: Vec<f64> = ok.iter().map(|(e, _)| e.psi_hat).collect();
        let ses: Vec<f64> = ok.iter().map(|(e, _)| e.se).collect();
        let mean_estimate = estimates.iter().sum::<f64>() / r;
        let empirical_sd = (ok.len() > 1).then(|| {
            (estimates.iter().map(|v| (v - mean_estimate).powi(2)).sum::<f64>() / (r - 1.0)).sqrt()
        });
        let mean_se = ses.iter().sum::<f64>() / r;
        let covered = ok
            .iter()
            .filter(|(e, _)| e.ci.0 <= truth.value && truth.value <= e.ci.1)
            .count() as f64;
        let coverage = covered / r;
        Ok(MetricsReport {
            dgp: dgp.name().to_string(),
            spec: spec.clone(),
            method,
            arm,
            n: plan.n,
            folds: plan.folds,
            replications: runs.len(),
            completed: ok.len(),
            excluded,
            truth: truth.value,
            truth_mc_se: truth.mc_se,
            mean_estimate,
            bias: mean_estimate - truth.value,
            bias_mc_se: empirical_sd.map(|sd| sd / r.sqrt()),
            empirical_sd,
            mean_se,
            se_ratio: empirical_sd.map(|sd| mean_se / sd),
            coverage,
            coverage_mc_se: (coverage * (1.0 - coverage) / r).sqrt(),
            rmse: (estimates.iter().map(|v| (v - truth.value).powi(2)).sum::<f64>() / r).sqrt(),
            mean_runtime_secs: ok.iter().map(|(_, t)| t).sum::<f64>() / r,
            max_abs_post_condition: ok
                .iter()
                .map(|(e, _)| e.diagnostics.post_condition.unwrap_or(0.0).abs())
                .fold(0.0, f64::max),
            first_error,
            estimates,
            ses,
        })
    }

    /// `|bias| / (empirical_sd/√R)`, infinite for a single replication.
    pub fn bias_in_mc_se(&self) -> f64 {
        self.bias_mc_se.map_or(f64::INFINITY, |s| self.bias.abs() / s)
    }
}

type Run = std::result::Result<(EstimateReport, f64), String>;

/// One replication: data, folds, nuisances, then every method on the same
/// nuisances. Runtimes include the shared fitting time.
fn replication(
    dgp: &Dgp,
    spec: &EstimandSpec,
    methods: &[Method],
    config: &LearnerConfig,
    plan: &RunPlan,
    r: usize,
) -> Vec<Run> {
    let start = Instant::now();
    let seed = plan.replication_seed(r);
    let fitted = dgp.generate(plan.n, seed).and_then(|data| {
        let folds = make_folds(plan.n, plan.folds, derive_seed(seed, 0))?;
        let cf = fit_cross_fitted_nuisances(&data, spec, config, &folds)?;
        Ok((data, cf))
    });
    let fit_time = start.elapsed().as_secs_f64();
    match fitted {
        Err(e) => vec![Err(format!("replication {r}: {e}")); methods.len()],
        Ok((data, cf)) => methods
            .iter()
            .map(|&m| {
                let t = Instant::now();
                estimate(m, spec, &data, &cf, plan.alpha)
                    .map(|mut rep| {
                        rep.eif_values = Vec::new();
                        (rep, fit_time + t.elapsed().as_secs_f64())
                    })
                    .map_err(|e| format!("replication {r}: {e}"))
            })
            .collect(),
    }
}

/// Raw per-replication results, outer index = replication, inner = method.
pub fn replicate(
    dgp: &Dgp,
    spec: &EstimandSpec,
    methods: &[Method],
    config: &LearnerConfig,
    plan: &RunPlan,
) -> Result<Vec<Vec<Run>>> {
    spec.validate()?;
    config.validate(spec)?;
    if plan.reps == 0 {
        return Err(Error::Argument("at least one replication is required".into()));
    }
    if methods.is_empty() {
        return Err(Error::Argument("no estimation method selected".into()));
    }
    Ok((0..plan.reps)
        .into_par_iter()
        .map(|r| replication(dgp, spec, methods, config, plan, r))
        .collect())
}

/// One [`MetricsReport`] per method, all methods sharing each replication's
/// data and nuisances.
pub fn run_replications_multi(
    dgp: &Dgp,
    spec: &EstimandSpec,
    methods: &[Method],
    config: &LearnerConfig,
    plan: &RunPlan,
    arm: Option<Arm>,
) -> Result<Vec<MetricsReport>> {
    let truth = dgp.truth(spec, plan.oracle_size, plan.oracle_seed())?;
    let runs = replicate(dgp, spec, methods, config, plan)?;
    methods
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let col: Vec<Run> = runs.iter().map(|r| r[j].clone()).collect();
            MetricsReport::aggregate(dgp, spec, m, arm, plan, truth, &col)
        })
        .collect()
}

pub fn run_replications(
    dgp: &Dgp,
    spec: &EstimandSpec,
    method: Method,
    config: &LearnerConfig,
    plan: &RunPlan,
) -> Result<MetricsReport> {
    Ok(run_replications_multi(dgp, spec, &[method], config, plan, None)?.remove(0))
}

/// The four-arm misspecification experiment: every arm fits the ATE with
/// each of `methods`. Meant for `ate-nonlinear`, where main-effects models
/// are wrong and quadratic ones are right.
pub fn double_robustness_experiment(
    dgp: &Dgp,
    arms: &[Arm],
    methods: &[Method],
    plan: &RunPlan,
) -> Result<Vec<MetricsReport>> {
    if !matches!(dgp, Dgp::AteNonlinear { .. }) {
        return Err(Error::Argument(format!(
            "the double-robustness arms are defined for ate-nonlinear, not {}",
            dgp.name()
        )));
    }
    let spec = EstimandSpec::Ate;
    let mut out = Vec::new();
    for &arm in arms {
        out.extend(run_replications_multi(dgp, &spec, methods, &arm.config(&spec)?, plan, Some(arm))?);
    }
    Ok(out)
}

/// Efficiency of the estimating-equation median against the sample mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianEfficiencyReport {
    pub n: usize,
    pub reps: usize,
    pub sigma: f64,
    pub median: MetricsReport,
    pub mean: MetricsReport,
    /// Empirical sd of the median over `σ/√n`; `√(π/2) ≈ 1.2533` in the limit.
    pub median_sd_ratio: f64,
    pub mean_sd_ratio: f64,
    /// Mean influence-function se of the median over its empirical sd.
    pub median_se_ratio: f64,
}

/// Median (estimating equation with a KDE density) and mean (one-step) on
/// the same standard normal samples.
pub fn median_efficiency_experiment(plan: &RunPlan) -> Result<MedianEfficiencyReport> {
    let sigma = 1.0;
    let dgp = Dgp::NormalMean { mu: 0.0, sigma };
    let median_spec = EstimandSpec::Quantile { tau: 0.5 };
    let median = run_replications(
        &dgp,
        &median_spec,
        Method::EstimatingEquation,
        &LearnerConfig::defaults(&median_spec)?,
        plan,
    )?;
    let mean_spec = EstimandSpec::PopulationMean;
    let mean = run_replications(&dgp, &mean_spec, Method::OneStep, &LearnerConfig::defaults(&mean_spec)?, plan)?;
    let scale = sigma / (plan.n as f64).sqrt();
    let sd = |m: &MetricsReport| {
        m.empirical_sd
            .ok_or_else(|| Error::Argument("efficiency ratios need at least 2 replications".into()))
    };
    Ok(MedianEfficiencyReport {
        n: plan.n,
        reps: plan.reps,
        sigma,
        median_sd_ratio: sd(&median)? / scale,
        mean_sd_ratio: sd(&mean)? / scale,
        median_se_ratio: median.mean_se / sd(&median)?,
        median,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strip_runtime(mut m: MetricsReport) -> MetricsReport {
        m.mean_runtime_secs = 0.0;
        m
    }

    #[test]
    fn single_replication_matches_its_report() {
        let dgp = Dgp::from_name("ate-linear").unwrap();
        let spec = EstimandSpec::Ate;
        let config = dgp.correct_config(&spec).unwrap();
        let plan = RunPlan::new(300, 1, 4);
        let m = run_replications(&dgp, &spec, Method::OneStep, &config, &plan).unwrap();
        let seed = plan.replication_seed(0);
        let data = dgp.generate(300, seed).unwrap();
        let folds = make_folds(300, 5, derive_seed(seed, 0)).unwrap();
        let cf = fit_cross_fitted_nuisances(&data, &spec, &config, &folds).unwrap();
        let e = estimate(Method::OneStep, &spec, &data, &cf, 0.05).unwrap();
        assert_eq!(m.mean_estimate, e.psi_hat);
        assert_eq!(m.mean_se, e.se);
        assert_eq!(m.coverage, (e.ci.0 <= 1.0 && 1.0 <= e.ci.1) as u8 as f64);
        assert_eq!(m.empirical_sd, None);
    }

    #[test]
    fn reproducible() {
        let dgp = Dgp::from_name("ate-linear").unwrap();
        let spec = EstimandSpec::Ate;
        let config = dgp.correct_config(&spec).unwrap();
        let plan = RunPlan::new(200, 8, 2);
        let methods = [Method::OneStep, Method::Tmle];
        let a = run_replications_multi(&dgp, &spec, &methods, &config, &plan, None).unwrap();
        let b = run_replications_multi(&dgp, &spec, &methods, &config, &plan, None).unwrap();
        let a: Vec<_> = a.into_iter().map(strip_runtime).collect();
        let b: Vec<_> = b.into_iter().map(strip_runtime).collect();
        assert_eq!(a, b);
        assert!(a.iter().all(|m| (0.0..=1.0).contains(&m.coverage)));
    }

    #[test]
    fn normal_mean_coverage() {
        let dgp = Dgp::from_name("normal-mean").unwrap();
        let spec = EstimandSpec::PopulationMean;
        let plan = RunPlan::new(1000, 1000, 17);
        let m = run_replications(&dgp, &spec, Method::OneStep, &LearnerConfig::defaults(&spec).unwrap(), &plan)
            .unwrap();
        assert!((0.925..=0.97).contains(&m.coverage), "{}", m.coverage);
    }

    #[test]
    fn failures_are_excluded_and_counted() {
        // ten rows cannot fill five folds of a logistic fit with nine features
        let dgp = Dgp::from_name("ate-nonlinear").unwrap();
        let spec = EstimandSpec::Ate;
        let plan = RunPlan::new(10, 3, 1);
        let err = run_replications(&dgp, &spec, Method::OneStep, &Arm::BothCorrect.config(&spec).unwrap(), &plan)
            .unwrap_err();
        assert!(err.to_string().contains("3 of 3 replications"), "{err}");
    }
}
