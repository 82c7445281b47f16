//! Built-in nuisance learners.
//!
//! Four families only: least squares (optionally ridge penalised), penalised
//! logistic regression by IRLS, Nadaraya–Watson kernel regression and
//! Gaussian kernel density estimation. Every fit is deterministic and
//! immutable once built.

mod kde;
mod kernel;
mod linear;
mod logistic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use kde::{fit_kde, DensityFit};
pub use kernel::{fit_kernel_regression, KernelFit};
pub use linear::{fit_ols, LinearFit};
pub use logistic::{fit_logistic, LogisticFit};

/// Bandwidth choice for kernel learners.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth {
    Auto,
    Fixed(f64),
}

impl Bandwidth {
    /// Per-axis bandwidths for `sample` (rows are points).
    pub fn resolve(&self, sample: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
        match *self {
            Bandwidth::Fixed(h) if h > 0.0 && h.is_finite() => Ok(vec![h; dim]),
            Bandwidth::Fixed(h) => Err(Error::Argument(format!("bandwidth must be > 0, got {h}"))),
            Bandwidth::Auto => (0..dim)
                .map(|a| {
                    let col: Vec<f64> = sample.iter().map(|r| r[a]).collect();
                    silverman_bandwidth(&col)
                })
                .collect(),
        }
    }
}

/// Silverman's rule `0.9·min(sd, IQR/1.34)·n^(−1/5)`.
///
/// Falls back to whichever spread measure is positive when the other is zero.
pub fn silverman_bandwidth(x: &[f64]) -> Result<f64> {
    let n = x.len();
    if n < 2 {
        return Err(Error::Argument("bandwidth rule needs at least 2 points".into()));
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let sd = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt();
    let mut sorted = x.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let iqr = (quantile_linear(&sorted, 0.75) - quantile_linear(&sorted, 0.25)) / 1.34;
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr),
        (true, false) => sd,
        (false, true) => iqr,
        (false, false) => {
            return Err(Error::Argument(
                "cannot choose a bandwidth for a constant column".into(),
            ))
        }
    };
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

fn quantile_linear(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Raw columns, optional powers up to `degree` (≤ 3) and optional pairwise
/// interactions. The intercept is never part of the map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub degree: u8,
    pub interactions: bool,
}

impl Default for FeatureMap {
    fn default() -> Self {
        FeatureMap {
            degree: 1,
            interactions: false,
        }
    }
}

impl FeatureMap {
    pub fn new(degree: u8, interactions: bool) -> Result<Self> {
        if !(1..=3).contains(&degree) {
            return Err(Error::Argument(format!(
                "polynomial degree must be 1, 2 or 3, got {degree}"
            )));
        }
        Ok(FeatureMap {
            degree,
            interactions,
        })
    }

    pub fn output_dim(&self, input_dim: usize) -> usize {
        let pairs = if self.interactions {
            input_dim * input_dim.saturating_sub(1) / 2
        } else {
            0
        };
        input_dim * self.degree as usize + pairs
    }

    pub fn expand(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim(x.len()));
        for k in 1..=self.degree as i32 {
            out.extend(x.iter().map(|v| v.powi(k)));
        }
        if self.interactions {
            for i in 0..x.len() {
                for j in i + 1..x.len() {
                    out.push(x[i] * x[j]);
                }
            }
        }
        out
    }

    /// Derivative of every expanded feature with respect to input `axis`.
    pub fn expand_grad(&self, x: &[f64], axis: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.output_dim(x.len()));
        for k in 1..=self.degree as i32 {
            out.extend((0..x.len()).map(|j| {
                if j == axis {
                    k as f64 * x[j].powi(k - 1)
                } else {
                    0.0
                }
            }));
        }
        if self.interactions {
            for i in 0..x.len() {
                for j in i + 1..x.len() {
                    out.push(if i == axis {
                        x[j]
                    } else if j == axis {
                        x[i]
                    } else {
                        0.0
                    });
                }
            }
        }
        out
    }
}

/// A fitted regression, point-evaluable at any finite input of the trained
/// arity.
#[derive(Debug, Clone)]
pub enum RegressionFit {
    Linear(LinearFit),
    Logistic(LogisticFit),
    Kernel(KernelFit),
}

impl RegressionFit {
    pub fn arity(&self) -> usize {
        match self {
            RegressionFit::Linear(f) => f.arity(),
            RegressionFit::Logistic(f) => f.arity(),
            RegressionFit::Kernel(f) => f.arity(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            RegressionFit::Linear(f) if f.ridge_lambda() > 0.0 => "ridge",
            RegressionFit::Linear(_) => "ols",
            RegressionFit::Logistic(_) => "logistic",
            RegressionFit::Kernel(_) => "kernel",
        }
    }

    fn check_arity(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arity() {
            return Err(Error::Argument(format!(
                "fit expects {} inputs, got {}",
                self.arity(),
                x.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite prediction input".into()));
        }
        Ok(())
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        self.check_arity(x)?;
        match self {
            RegressionFit::Linear(f) => Ok(f.predict(x)),
            RegressionFit::Logistic(f) => Ok(f.predict(x)),
            RegressionFit::Kernel(f) => f.predict(x),
        }
    }

    /// Partial derivative of the prediction with respect to input `axis`.
    pub fn predict_grad(&self, x: &[f64], axis: usize) -> Result<f64> {
        self.check_arity(x)?;
        if axis >= x.len() {
            return Err(Error::Argument(format!("axis {axis} out of range")));
        }
        match self {
            RegressionFit::Linear(f) => Ok(f.predict_grad(x, axis)),
            RegressionFit::Logistic(f) => Ok(f.predict_grad(x, axis)),
            RegressionFit::Kernel(f) => f.predict_grad(x, axis),
        }
    }
}

pub(crate) fn validate_design(features: &[Vec<f64>], targets: &[f64]) -> Result<usize> {
    if features.len() != targets.len() {
        return Err(Error::Argument(format!(
            "{} feature rows but {} targets",
            features.len(),
            targets.len()
        )));
    }
    if features.is_empty() {
        return Err(Error::Argument("no training rows".into()));
    }
    let arity = features[0].len();
    if features.iter().any(|r| r.len() != arity) {
        return Err(Error::Argument("ragged feature matrix".into()));
    }
    if features.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite training value".into()));
    }
    Ok(arity)
}

/// Expanded design without the intercept column; rejects constant columns,
/// which would duplicate the intercept.
pub(crate) fn expanded_design(map: &FeatureMap, features: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let design: Vec<Vec<f64>> = features.iter().map(|r| map.expand(r)).collect();
    if let Some(first) = design.first() {
        for j in 0..first.len() {
            if design.iter().all(|r| r[j] == first[j]) && design.len() > 1 {
                return Err(Error::Argument(format!(
                    "design column {j} is constant and duplicates the intercept"
                )));
            }
        }
    }
    Ok(design)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn feature_map_dims_and_gradient() {
        let m = FeatureMap::new(2, true).unwrap();
        let x = [2.0, 3.0];
        assert_eq!(m.expand(&x), vec![2.0, 3.0, 4.0, 9.0, 6.0]);
        assert_eq!(m.output_dim(2), 5);
        assert_eq!(m.expand_grad(&x, 0), vec![1.0, 0.0, 4.0, 0.0, 3.0]);
        assert!(FeatureMap::new(4, false).is_err());
    }

    #[test]
    fn silverman_matches_hand_value() {
        let x: Vec<f64> = (0..100).map(|i| i as f64).collect();
        let sd = (x.iter().map(|v| (v - 49.5f64).powi(2)).sum::<f64>() / 99.0).sqrt();
        let iqr = (74.25 - 24.75) / 1.34;
        let h = 0.9 * sd.min(iqr) * 100f64.powf(-0.2);
        assert!((silverman_bandwidth(&x).unwrap() - h).abs() < 1e-12);
        assert!(silverman_bandwidth(&[1.0, 1.0, 1.0]).is_err());
    }
}
