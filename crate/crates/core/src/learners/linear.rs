use nalgebra::{DMatrix, DVector};

use super::{expanded_design, validate_design, FeatureMap, RegressionFit};
use crate::error::{Error, Result};

/// Least-squares fit with an unpenalised intercept.
#[derive(Debug, Clone)]
pub struct LinearFit {
    map: FeatureMap,
    arity: usize,
    /// Intercept first, then one coefficient per expanded feature.
    coefficients: Vec<f64>,
    ridge_lambda: f64,
}

impl LinearFit {
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn ridge_lambda(&self) -> f64 {
        self.ridge_lambda
    }

    pub(crate) fn predict(&self, x: &[f64]) -> f64 {
        let phi = self.map.expand(x);
        self.coefficients[0]
            + phi
                .iter()
                .zip(&self.coefficients[1..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub(crate) fn predict_grad(&self, x: &[f64], axis: usize) -> f64 {
        self.map
            .expand_grad(x, axis)
            .iter()
            .zip(&self.coefficients[1..])
            .map(|(a, b)| a * b)
            .sum()
    }
}

/// Minimises `‖y − β₀ − Φβ‖² + λ‖β‖²` over the expanded features `Φ`.
pub fn fit_ols(
    features: &[Vec<f64>],
    targets: &[f64],
    ridge_lambda: f64,
    map: &FeatureMap,
) -> Result<RegressionFit> {
    let arity = validate_design(features, targets)?;
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(Error::Argument(format!("ridge_lambda must be ≥ 0, got {ridge_lambda}")));
    }
    let design = expanded_design(map, features)?;
    let p = map.output_dim(arity) + 1;
    if ridge_lambda == 0.0 && features.len() < p {
        return Err(Error::Singular(format!(
            "{} rows cannot identify {p} coefficients; use ridge_lambda > 0",
            features.len()
        )));
    }
    let mut xtx = DMatrix::<f64>::zeros(p, p);
    let mut xty = DVector::<f64>::zeros(p);
    let mut row = vec![0.0; p];
    for (phi, &y) in design.iter().zip(targets) {
        row[0] = 1.0;
        row[1..].copy_from_slice(phi);
        for i in 0..p {
            xty[i] += row[i] * y;
            for j in i..p {
                xtx[(i, j)] += row[i] * row[j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            xtx[(i, j)] = xtx[(j, i)];
        }
        if i > 0 {
            xtx[(i, i)] += ridge_lambda;
        }
    }
    let beta = solve_spd(xtx, xty, ridge_lambda)?;
    Ok(RegressionFit::Linear(LinearFit {
        map: map.clone(),
        arity,
        coefficients: beta.iter().copied().collect(),
        ridge_lambda,
    }))
}

/// Cholesky solve with a conditioning check; `lambda` only shapes the error
/// message.
pub(crate) fn solve_spd(a: DMatrix<f64>, b: DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let scale = a.diagonal().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let singular = || {
        Error::Singular(if lambda == 0.0 {
            "normal equations are singular; set ridge_lambda > 0".into()
        } else {
            "normal equations are numerically singular".into()
        })
    };
    let chol = a.cholesky().ok_or_else(singular)?;
    let l = chol.l();
    let min_pivot = l.diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v * v));
    if !(min_pivot > 1e-13 * scale) {
        return Err(singular());
    }
    Ok(chol.solve(&b))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn col(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn exact_line_recovered() {
        let x: Vec<f64> = (0..10).map(|i| i as f64 * 0.3).collect();
        let y: Vec<f64> = x.iter().map(|v| 2.0 + 3.0 * v).collect();
        let RegressionFit::Linear(fit) = fit_ols(&col(&x), &y, 0.0, &FeatureMap::default()).unwrap()
        else {
            unreachable!()
        };
        assert!((fit.coefficients()[0] - 2.0).abs() < 1e-10);
        assert!((fit.coefficients()[1] - 3.0).abs() < 1e-10);
        assert!((fit.predict_grad(&[0.7], 0) - 3.0).abs() < 1e-10);
    }

    #[test]
    fn constant_targets_give_flat_fit() {
        let x = col(&[0.0, 1.0, 2.0, 5.0]);
        let fit = fit_ols(&x, &[4.0; 4], 0.0, &FeatureMap::default()).unwrap();
        let RegressionFit::Linear(f) = &fit else { unreachable!() };
        assert!((f.coefficients()[0] - 4.0).abs() < 1e-12);
        assert!(f.coefficients()[1].abs() < 1e-12);
    }

    #[test]
    fn huge_ridge_shrinks_to_mean() {
        let x = col(&[0.0, 1.0, 2.0, 3.0]);
        let y = [1.0, 3.0, 2.0, 6.0];
        let fit = fit_ols(&x, &y, 1e12, &FeatureMap::default()).unwrap();
        let RegressionFit::Linear(f) = &fit else { unreachable!() };
        assert!(f.coefficients()[1].abs() < 1e-9);
        assert!((f.coefficients()[0] - 3.0).abs() < 1e-8);
    }

    #[test]
    fn collinear_design_is_singular_without_ridge() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let y: Vec<f64> = (0..6).map(|i| i as f64).collect();
        let err = fit_ols(&x, &y, 0.0, &FeatureMap::default()).unwrap_err();
        assert!(matches!(err, Error::Singular(ref m) if m.contains("ridge_lambda")));
        assert!(fit_ols(&x, &y, 0.1, &FeatureMap::default()).is_ok());
    }

    #[test]
    fn constant_column_rejected() {
        let x: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, 1.0]).collect();
        let y = [0.0; 6];
        assert!(fit_ols(&x, &y, 0.0, &FeatureMap::default()).is_err());
    }

    #[test]
    fn quadratic_map_fits_parabola() {
        let x: Vec<f64> = (0..20).map(|i| -1.0 + i as f64 * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| 1.0 - v + 2.0 * v * v).collect();
        let fit = fit_ols(&col(&x), &y, 0.0, &FeatureMap::new(2, false).unwrap()).unwrap();
        assert!((fit.predict(&[0.5]).unwrap() - 1.0).abs() < 1e-10);
        assert!((fit.predict_grad(&[0.5], 0).unwrap() - 1.0).abs() < 1e-10);
    }
}
