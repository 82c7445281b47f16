use super::{validate_design, Bandwidth, RegressionFit};
use crate::error::{Error, Result};

const MIN_TOTAL_WEIGHT: f64 = 1e-300;

/// Nadaraya–Watson regression with a product Gaussian kernel.
#[derive(Debug, Clone)]
pub struct KernelFit {
    points: Vec<Vec<f64>>,
    targets: Vec<f64>,
    bandwidth: Vec<f64>,
}

impl KernelFit {
    pub fn arity(&self) -> usize {
        self.bandwidth.len()
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    fn weight(&self, x: &[f64], p: &[f64]) -> f64 {
        let mut q = 0.0;
        for ((a, b), h) in x.iter().zip(p).zip(&self.bandwidth) {
            let u = (a - b) / h;
            q += u * u;
        }
        (-0.5 * q).exp()
    }

    pub(crate) fn predict(&self, x: &[f64]) -> Result<f64> {
        let (mut num, mut den) = (0.0, 0.0);
        for (p, y) in self.points.iter().zip(&self.targets) {
            let w = self.weight(x, p);
            num += w * y;
            den += w;
        }
        if den < MIN_TOTAL_WEIGHT {
            return Err(Error::Extrapolation { weight: den });
        }
        Ok(num / den)
    }

    pub(crate) fn predict_grad(&self, x: &[f64], axis: usize) -> Result<f64> {
        let h2 = self.bandwidth[axis] * self.bandwidth[axis];
        let (mut num, mut den, mut dnum, mut dden) = (0.0, 0.0, 0.0, 0.0);
        for (p, y) in self.points.iter().zip(&self.targets) {
            let w = self.weight(x, p);
            let dw = -w * (x[axis] - p[axis]) / h2;
            num += w * y;
            den += w;
            dnum += dw * y;
            dden += dw;
        }
        if den < MIN_TOTAL_WEIGHT {
            return Err(Error::Extrapolation { weight: den });
        }
        Ok((dnum * den - num * dden) / (den * den))
    }
}

/// Nadaraya–Watson fit; `Bandwidth::Auto` applies Silverman's rule per axis.
pub fn fit_kernel_regression(
    features: &[Vec<f64>],
    targets: &[f64],
    bandwidth: &Bandwidth,
) -> Result<RegressionFit> {
    let arity = validate_design(features, targets)?;
    let bandwidth = bandwidth.resolve(features, arity)?;
    Ok(RegressionFit::Kernel(KernelFit {
        points: features.to_vec(),
        targets: targets.to_vec(),
        bandwidth,
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_targets_predict_constant() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let fit = fit_kernel_regression(&x, &[2.5; 10], &Bandwidth::Auto).unwrap();
        for v in [-1.0, 3.3, 12.0] {
            assert!((fit.predict(&[v]).unwrap() - 2.5).abs() < 1e-12);
        }
    }

    #[test]
    fn tiny_bandwidth_interpolates() {
        let x: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64]).collect();
        let y = [3.0, -1.0, 4.0, 1.0, 5.0];
        let fit = fit_kernel_regression(&x, &y, &Bandwidth::Fixed(1e-3)).unwrap();
        for (xi, yi) in x.iter().zip(y) {
            assert_eq!(fit.predict(xi).unwrap(), yi);
        }
        assert!(matches!(
            fit.predict(&[0.5]),
            Err(Error::Extrapolation { .. })
        ));
    }

    #[test]
    fn sine_recovered_on_interior() {
        let n = 2000;
        let x: Vec<Vec<f64>> = (0..n)
            .map(|i| vec![std::f64::consts::PI * (i as f64 + 0.5) / n as f64])
            .collect();
        let y: Vec<f64> = x.iter().map(|v| v[0].sin()).collect();
        let fit = fit_kernel_regression(&x, &y, &Bandwidth::Auto).unwrap();
        let max_err = (1..100)
            .map(|i| 0.3 + (std::f64::consts::PI - 0.6) * i as f64 / 100.0)
            .map(|v| (fit.predict(&[v]).unwrap() - v.sin()).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 0.05, "max error {max_err}");
    }

    #[test]
    fn gradient_matches_finite_difference() {
        let x: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64 * 0.1, (i % 7) as f64]).collect();
        let y: Vec<f64> = x.iter().map(|v| v[0] * v[0] - v[1]).collect();
        let fit = fit_kernel_regression(&x, &y, &Bandwidth::Auto).unwrap();
        let pt = [1.7, 2.2];
        let e = 1e-6;
        let fd = (fit.predict(&[pt[0] + e, pt[1]]).unwrap() - fit.predict(&[pt[0] - e, pt[1]]).unwrap())
            / (2.0 * e);
        assert!((fit.predict_grad(&pt, 0).unwrap() - fd).abs() < 1e-6);
    }
}
