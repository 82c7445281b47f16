use super::Bandwidth;
use crate::error::{Error, Result};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Gaussian product-kernel density estimate.
#[derive(Debug, Clone)]
pub struct DensityFit {
    sample: Vec<Vec<f64>>,
    bandwidth: Vec<f64>,
    norm: f64,
}

impl DensityFit {
    pub fn dim(&self) -> usize {
        self.bandwidth.len()
    }

    pub fn bandwidth(&self) -> &[f64] {
        &self.bandwidth
    }

    pub fn sample(&self) -> &[Vec<f64>] {
        &self.sample
    }

    fn check(&self, point: &[f64]) -> Result<()> {
        if point.len() != self.dim() {
            return Err(Error::Argument(format!(
                "density has dimension {}, got point of length {}",
                self.dim(),
                point.len()
            )));
        }
        Ok(())
    }

    fn kernel(&self, point: &[f64], s: &[f64]) -> f64 {
        let mut q = 0.0;
        for ((a, b), h) in point.iter().zip(s).zip(&self.bandwidth) {
            let u = (a - b) / h;
            q += u * u;
        }
        (-0.5 * q).exp()
    }

    pub fn density_at(&self, point: &[f64]) -> Result<f64> {
        self.check(point)?;
        let sum: f64 = self.sample.iter().map(|s| self.kernel(point, s)).sum();
        Ok(sum * self.norm)
    }

    /// Analytic partial derivative of the density along `axis`.
    pub fn density_grad_at(&self, point: &[f64], axis: usize) -> Result<f64> {
        self.check(point)?;
        if axis >= self.dim() {
            return Err(Error::Argument(format!("axis {axis} out of range")));
        }
        let h2 = self.bandwidth[axis] * self.bandwidth[axis];
        let sum: f64 = self
            .sample
            .iter()
            .map(|s| -self.kernel(point, s) * (point[axis] - s[axis]) / h2)
            .sum();
        Ok(sum * self.norm)
    }

    /// Grid spanning the sample range ± 5h along a one-dimensional fit.
    pub fn grid_1d(&self, points: usize) -> Vec<f64> {
        let h = self.bandwidth[0];
        let (lo, hi) = self
            .sample
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, u), s| (l.min(s[0]), u.max(s[0])));
        let (a, b) = (lo - 5.0 * h, hi + 5.0 * h);
        let step = (b - a) / (points - 1) as f64;
        (0..points).map(|i| a + i as f64 * step).collect()
    }

    /// `∫ f̂²` by the trapezoid rule on [`grid_1d`](Self::grid_1d).
    pub fn integral_of_square(&self, points: usize) -> Result<f64> {
        if self.dim() != 1 {
            return Err(Error::Argument("∫f̂² is only defined for 1-d fits here".into()));
        }
        let grid = self.grid_1d(points);
        let vals = grid
            .iter()
            .map(|&y| self.density_at(&[y]).map(|f| f * f))
            .collect::<Result<Vec<_>>>()?;
        Ok(trapezoid(&grid, &vals))
    }
}

pub(crate) fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2)
        .zip(y.windows(2))
        .map(|(xs, ys)| 0.5 * (xs[1] - xs[0]) * (ys[0] + ys[1]))
        .sum()
}

/// Fits a KDE; rows of `sample` are points.
pub fn fit_kde(sample: &[Vec<f64>], bandwidth: &Bandwidth) -> Result<DensityFit> {
    if sample.len() < 2 {
        return Err(Error::Argument("kernel density needs at least 2 points".into()));
    }
    let dim = sample[0].len();
    if dim == 0 || sample.iter().any(|s| s.len() != dim) {
        return Err(Error::Argument("ragged or empty density sample".into()));
    }
    if sample.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Argument("non-finite density sample".into()));
    }
    let bandwidth = bandwidth.resolve(sample, dim)?;
    let norm = bandwidth.iter().map(|h| INV_SQRT_2PI / h).product::<f64>() / sample.len() as f64;
    Ok(DensityFit {
        sample: sample.to_vec(),
        bandwidth,
        norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    fn column(v: &[f64]) -> Vec<Vec<f64>> {
        v.iter().map(|&x| vec![x]).collect()
    }

    #[test]
    fn symmetric_pair_peaks_at_centre() {
        let a = 0.7;
        let fit = fit_kde(&column(&[-a, a]), &Bandwidth::Fixed(1.0)).unwrap();
        let at0 = fit.density_at(&[0.0]).unwrap();
        let phi = INV_SQRT_2PI * (-0.5 * a * a).exp();
        assert!((at0 - phi).abs() < 1e-15);
        assert!(fit.density_grad_at(&[0.0], 0).unwrap().abs() < 1e-15);
        assert!(fit.density_at(&[0.1]).unwrap() < at0);
    }

    #[test]
    fn integrates_to_one_and_gradient_to_zero() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s: Vec<f64> = (0..300).map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal)).collect();
        let fit = fit_kde(&column(&s), &Bandwidth::Auto).unwrap();
        let grid = fit.grid_1d(4096);
        let f: Vec<f64> = grid.iter().map(|&y| fit.density_at(&[y]).unwrap()).collect();
        let g: Vec<f64> = grid.iter().map(|&y| fit.density_grad_at(&[y], 0).unwrap()).collect();
        assert!((trapezoid(&grid, &f) - 1.0).abs() < 1e-3);
        assert!(trapezoid(&grid, &g).abs() < 1e-3);
        assert!(f.iter().all(|v| *v >= 0.0));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(9);
        let s: Vec<Vec<f64>> = (0..200)
            .map(|_| vec![rng.sample(rand_distr::StandardNormal), rng.random::<f64>()])
            .collect();
        let fit = fit_kde(&s, &Bandwidth::Auto).unwrap();
        for _ in 0..100 {
            let p = [rng.random_range(-2.0..2.0), rng.random_range(0.0..1.0)];
            for axis in 0..2 {
                let e = 1e-5 * fit.bandwidth()[axis];
                let mut hi = p;
                let mut lo = p;
                hi[axis] += e;
                lo[axis] -= e;
                let fd = (fit.density_at(&hi).unwrap() - fit.density_at(&lo).unwrap()) / (2.0 * e);
                let an = fit.density_grad_at(&p, axis).unwrap();
                assert!((fd - an).abs() <= 1e-6 * an.abs().max(1e-3), "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn needs_two_points() {
        assert!(fit_kde(&column(&[1.0]), &Bandwidth::Auto).is_err());
    }
}
