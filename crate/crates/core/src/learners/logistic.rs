use nalgebra::{DMatrix, DVector};

use super::linear::solve_spd;
use super::{expanded_design, validate_design, FeatureMap, RegressionFit};
use crate::error::{Error, Result};

const MAX_ITER: usize = 100;
const SCORE_TOL: f64 = 1e-8;
const SEPARATION_BOUND: f64 = 50.0;

#[derive(Debug, Clone)]
pub struct LogisticFit {
    map: FeatureMap,
    arity: usize,
    coefficients: Vec<f64>,
    iterations: usize,
}

impl LogisticFit {
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn arity(&self) -> usize {
        self.arity
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    fn linear_predictor(&self, x: &[f64]) -> f64 {
        self.coefficients[0]
            + self
                .map
                .expand(x)
                .iter()
                .zip(&self.coefficients[1..])
                .map(|(a, b)| a * b)
                .sum::<f64>()
    }

    pub(crate) fn predict(&self, x: &[f64]) -> f64 {
        expit(self.linear_predictor(x))
    }

    pub(crate) fn predict_grad(&self, x: &[f64], axis: usize) -> f64 {
        let p = self.predict(x);
        let deta: f64 = self
            .map
            .expand_grad(x, axis)
            .iter()
            .zip(&self.coefficients[1..])
            .map(|(a, b)| a * b)
            .sum();
        p * (1.0 - p) * deta
    }
}

/// Logistic function, kept strictly inside (0, 1).
pub fn expit(eta: f64) -> f64 {
    let p = if eta >= 0.0 {
        1.0 / (1.0 + (-eta).exp())
    } else {
        let e = eta.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn penalized_loglik(design: &[Vec<f64>], labels: &[f64], beta: &[f64], lambda: f64) -> f64 {
    let mut ll = 0.0;
    for (phi, &y) in design.iter().zip(labels) {
        let eta = beta[0] + phi.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
        // log(1 + e^eta) without overflow
        let softplus = if eta > 0.0 {
            eta + (-eta).exp().ln_1p()
        } else {
            eta.exp().ln_1p()
        };
        ll += y * eta - softplus;
    }
    ll - 0.5 * lambda * beta[1..].iter().map(|b| b * b).sum::<f64>()
}

/// Ridge-penalised maximum likelihood by iteratively reweighted least
/// squares. The intercept is never penalised.
pub fn fit_logistic(
    features: &[Vec<f64>],
    labels: &[f64],
    ridge_lambda: f64,
    map: &FeatureMap,
) -> Result<RegressionFit> {
    let arity = validate_design(features, labels)?;
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Argument("logistic labels must be 0 or 1".into()));
    }
    if !labels.contains(&0.0) || !labels.contains(&1.0) {
        return Err(Error::Argument("logistic fit needs both labels present".into()));
    }
    if !(ridge_lambda >= 0.0 && ridge_lambda.is_finite()) {
        return Err(Error::Argument(format!("ridge_lambda must be ≥ 0, got {ridge_lambda}")));
    }
    let design = expanded_design(map, features)?;
    let p = map.output_dim(arity) + 1;
    let mut beta = vec![0.0; p];
    let mut iterations = 0;
    let mut row = vec![0.0; p];
    let separation = || {
        Error::Separation(format!(
            "coefficients exceed {SEPARATION_BOUND} in magnitude; set ridge_lambda > 0"
        ))
    };

    let mut current = penalized_loglik(&design, labels, &beta, ridge_lambda);
    while iterations < MAX_ITER {
        let mut hess = DMatrix::<f64>::zeros(p, p);
        let mut score = DVector::<f64>::zeros(p);
        for (phi, &y) in design.iter().zip(labels) {
            row[0] = 1.0;
            row[1..].copy_from_slice(phi);
            let eta: f64 = row.iter().zip(&beta).map(|(a, b)| a * b).sum();
            let mu = expit(eta);
            let w = mu * (1.0 - mu);
            for i in 0..p {
                score[i] += row[i] * (y - mu);
                for j in i..p {
                    hess[(i, j)] += w * row[i] * row[j];
                }
            }
        }
        for i in 0..p {
            for j in 0..i {
                hess[(i, j)] = hess[(j, i)];
            }
            if i > 0 {
                hess[(i, i)] += ridge_lambda;
                score[i] -= ridge_lambda * beta[i];
            }
        }
        if score.amax() < SCORE_TOL {
            break;
        }
        iterations += 1;
        let step = solve_spd(hess, score, ridge_lambda).map_err(|e| {
            if ridge_lambda == 0.0 {
                separation()
            } else {
                e
            }
        })?;
        // Newton step with halving on the penalised log-likelihood.
        let mut scale = 1.0;
        loop {
            let trial: Vec<f64> = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            let ll = penalized_loglik(&design, labels, &trial, ridge_lambda);
            if ll >= current || scale < 1e-10 {
                beta = trial;
                current = ll;
                break;
            }
            scale *= 0.5;
        }
        if ridge_lambda == 0.0 && beta.iter().any(|b| b.abs() > SEPARATION_BOUND) {
            return Err(separation());
        }
        if step.amax() * scale < 1e-14 * (1.0 + beta.iter().fold(0.0f64, |m, b| m.max(b.abs()))) {
            break;
        }
    }
    // Complete separation: the unpenalised likelihood is maximised only at
    // infinity, so the score can vanish while every label is fitted exactly.
    if ridge_lambda == 0.0
        && design.iter().zip(labels).all(|(phi, &y)| {
            let eta = beta[0] + phi.iter().zip(&beta[1..]).map(|(a, b)| a * b).sum::<f64>();
            (y - expit(eta)).abs() < 1e-6
        })
    {
        return Err(separation());
    }
    Ok(RegressionFit::Logistic(LogisticFit {
        map: map.clone(),
        arity,
        coefficients: beta,
        iterations,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn uninformative_features_give_half() {
        let x: Vec<Vec<f64>> = [0.0, 0.0, 1.0, 1.0, 2.0, 2.0].iter().map(|&v| vec![v]).collect();
        let y = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        let fit = fit_logistic(&x, &y, 0.0, &FeatureMap::default()).unwrap();
        for v in [-3.0, 0.0, 0.5, 7.0] {
            assert!((fit.predict(&[v]).unwrap() - 0.5).abs() < 1e-6);
        }
    }

    #[test]
    fn label_equal_feature_penalised_is_symmetric() {
        let x: Vec<Vec<f64>> = [0.0, 0.0, 1.0, 1.0].iter().map(|&v| vec![v]).collect();
        let y = [0.0, 0.0, 1.0, 1.0];
        let fit = fit_logistic(&x, &y, 0.1, &FeatureMap::default()).unwrap();
        assert!((fit.predict(&[0.5]).unwrap() - 0.5).abs() < 1e-6);
        let mut prev = 0.0;
        for i in 0..10 {
            let p = fit.predict(&[i as f64 * 0.1]).unwrap();
            assert!(p > prev);
            prev = p;
        }
        assert!(matches!(
            fit_logistic(&x, &y, 0.0, &FeatureMap::default()),
            Err(Error::Separation(_))
        ));
    }

    #[test]
    fn recovers_simulated_coefficients() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 100_000;
        let mut x = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let v: f64 = rng.sample(rand_distr::StandardNormal);
            let p = expit(v);
            x.push(vec![v]);
            y.push(if rng.random::<f64>() < p { 1.0 } else { 0.0 });
        }
        let RegressionFit::Logistic(fit) = fit_logistic(&x, &y, 0.0, &FeatureMap::default()).unwrap()
        else {
            unreachable!()
        };
        assert!(fit.coefficients()[0].abs() < 0.05);
        assert!((fit.coefficients()[1] - 1.0).abs() < 0.05);
    }

    #[test]
    fn one_label_rejected() {
        let x = vec![vec![0.0], vec![1.0]];
        assert!(fit_logistic(&x, &[1.0, 1.0], 0.0, &FeatureMap::default()).is_err());
    }

    #[test]
    fn predictions_stay_in_open_interval() {
        assert!(expit(1e6) < 1.0);
        assert!(expit(-1e6) > 0.0);
    }
}
