//! Smooth-path checks for estimands whose gradient involves a density.
//!
//! A point-mass contaminant makes the quantile or the average derivative
//! jump along the path, so these use normal families instead: the
//! contaminant is the base law shifted by `shift`.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use super::{one_sided_derivative, GateauxReport, Identity};
use crate::error::{Error, Result};
use crate::estimands::{EstimandSpec, Weight};

const SIMPSON_MAX_DEPTH: usize = 50;
const QUANTILE_BISECTION_TOL: f64 = 1e-12;
const ADE_HALF_WIDTH: f64 = 10.0;
const ADE_RHO: f64 = 0.5;
const ADE_QUADRATURE_TOL: f64 = 1e-9;

/// Base law and contaminant of a smooth-path check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum SmoothFamily {
    /// `Y ~ N(0, 1)` contaminated by `N(shift, 1)`.
    Normal { shift: f64 },
    /// `(X, Z)` standard bivariate normal with correlation 0.5 and
    /// `m(x, z) = sin x + xz/2`, contaminated by the same law shifted by
    /// `shift·(1, −1)` with `m̃ = m + shift·(x² − z)`.
    BivariateNormal { shift: f64 },
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("valid normal")
}

/// Adaptive Simpson quadrature of `f` over `[a, b]` to absolute tolerance `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> Result<f64> {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: usize,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        let delta = left + right - whole;
        if delta.abs() <= 15.0 * tol {
            return Ok(left + right + delta / 15.0);
        }
        if depth == 0 {
            return Err(Error::Integration(format!(
                "adaptive Simpson hit maximum depth on [{a}, {b}]"
            )));
        }
        Ok(recurse(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?
            + recurse(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?)
    }
    let (fa, fm, fb) = (f(a), f(0.5 * (a + b)), f(b));
    recurse(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, SIMPSON_MAX_DEPTH)
}

/// `inf{y : F(y) ≥ tau}` for a continuous increasing `cdf`: bisection to
/// 1e-12 then Newton polishing with the density.
fn continuous_quantile(cdf: &dyn Fn(f64) -> f64, pdf: &dyn Fn(f64) -> f64, tau: f64) -> Result<f64> {
    let (mut lo, mut hi) = (-50.0, 50.0);
    if cdf(lo) > tau || cdf(hi) < tau {
        return Err(Error::Solver("quantile outside the bisection bracket".into()));
    }
    while hi - lo > QUANTILE_BISECTION_TOL {
        let mid = 0.5 * (lo + hi);
        if cdf(mid) >= tau {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let mut q = 0.5 * (lo + hi);
    for _ in 0..3 {
        let d = pdf(q);
        if d > 0.0 {
            q -= (cdf(q) - tau) / d;
        }
    }
    Ok(q)
}

fn quantile_check(tau: f64, shift: f64) -> Result<(f64, f64, Vec<f64>)> {
    let n = std_normal();
    let psi_t = |t: f64| {
        let cdf = |y: f64| (1.0 - t) * n.cdf(y) + t * n.cdf(y - shift);
        let pdf = |y: f64| (1.0 - t) * n.pdf(y) + t * n.pdf(y - shift);
        continuous_quantile(&cdf, &pdf, tau)
    };
    let numerical = one_sided_derivative(psi_t, false)?;
    let q = psi_t(0.0)?;
    let fq = n.pdf(q);
    // φ jumps at q, so each side is integrated with its own constant
    let dens = |y: f64| n.pdf(y - shift);
    let (a, b) = (q.min(shift) - 14.0, q.max(shift) + 14.0);
    let analytic = (tau - 1.0) / fq * integrate(&dens, a, q, 1e-13)?
        + tau / fq * integrate(&dens, q, b, 1e-13)?;
    Ok((numerical.value, analytic, numerical.steps))
}

fn tail_check(c: f64, shift: f64) -> Result<(f64, f64, Vec<f64>)> {
    let n = std_normal();
    // E[Y 1{Y ≤ c}] for Y ~ N(mu, 1)
    let partial = |mu: f64| mu * n.cdf(c - mu) - n.pdf(c - mu);
    let psi_t = |t: f64| {
        let num = (1.0 - t) * partial(0.0) + t * partial(shift);
        let den = (1.0 - t) * n.cdf(c) + t * n.cdf(c - shift);
        Ok(num / den)
    };
    let numerical = one_sided_derivative(psi_t, false)?;
    let psi = psi_t(0.0)?;
    let fc = n.cdf(c);
    let analytic = integrate(
        &|y| (y - psi) / fc * n.pdf(y - shift),
        c.min(shift) - 14.0,
        c,
        1e-13,
    )?;
    Ok((numerical.value, analytic, numerical.steps))
}

/// Pieces of the bivariate family at one point.
struct AdePoint {
    f: f64,
    fx: f64,
    m: f64,
    mx: f64,
    ft: f64,
    ftx: f64,
    mt: f64,
    mtx: f64,
}

fn bvn(x: f64, z: f64) -> (f64, f64) {
    let r2 = 1.0 - ADE_RHO * ADE_RHO;
    let q = (x * x - 2.0 * ADE_RHO * x * z + z * z) / r2;
    let f = (-0.5 * q).exp() / (2.0 * std::f64::consts::PI * r2.sqrt());
    // ∂f/∂x = f · score
    (f, -f * (x - ADE_RHO * z) / r2)
}

fn ade_point(x: f64, z: f64, shift: f64) -> AdePoint {
    let (f, fx) = bvn(x, z);
    let (ft, ftx) = bvn(x - shift, z + shift);
    AdePoint {
        f,
        fx,
        m: x.sin() + 0.5 * x * z,
        mx: x.cos() + 0.5 * z,
        ft,
        ftx,
        mt: x.sin() + 0.5 * x * z + shift * (x * x - z),
        mtx: x.cos() + 0.5 * z + shift * 2.0 * x,
    }
}

/// Trapezoid rule on `[−L, L]²` with `n` intervals per side.
fn grid_integral(g: &dyn Fn(f64, f64) -> f64, n: usize) -> f64 {
    let h = 2.0 * ADE_HALF_WIDTH / n as f64;
    let mut total = 0.0;
    for i in 0..=n {
        let x = -ADE_HALF_WIDTH + i as f64 * h;
        let wx = if i == 0 || i == n { 0.5 } else { 1.0 };
        let mut row = 0.0;
        for j in 0..=n {
            let z = -ADE_HALF_WIDTH + j as f64 * h;
            let wz = if j == 0 || j == n { 0.5 } else { 1.0 };
            row += wz * g(x, z);
        }
        total += wx * row;
    }
    total * h * h
}

/// Doubles the grid until successive values agree to `ADE_QUADRATURE_TOL`
/// and returns the first converged resolution.
fn converged_resolution(g: &dyn Fn(f64, f64) -> f64) -> Result<usize> {
    let mut n = 32;
    let mut prev = grid_integral(g, n);
    while n < 4096 {
        n *= 2;
        let cur = grid_integral(g, n);
        if (cur - prev).abs() <= ADE_QUADRATURE_TOL * cur.abs().max(1.0) {
            return Ok(n);
        }
        prev = cur;
    }
    Err(Error::Integration("2-d trapezoid rule did not converge".into()))
}

fn ade_check(weight: &Weight, shift: f64) -> Result<(f64, f64, Vec<f64>)> {
    // Ψ(P_t) = ∫∫ w(x) ∂x m_t(x, z) f_t(x, z), with ∂x m_t · f_t = N_t′ − m_t f_t′
    // where N_t = (1 − t) f m + t f̃ m̃.
    let integrand = |t: f64, x: f64, z: f64| {
        let a = ade_point(x, z, shift);
        let s = 1.0 - t;
        let f_t = s * a.f + t * a.ft;
        if f_t == 0.0 {
            return 0.0;
        }
        let df_t = s * a.fx + t * a.ftx;
        let n_t = s * a.f * a.m + t * a.ft * a.mt;
        let dn_t = s * (a.fx * a.m + a.f * a.mx) + t * (a.ftx * a.mt + a.ft * a.mtx);
        weight.value(x) * (dn_t - n_t / f_t * df_t)
    };
    let res = 2 * converged_resolution(&|x, z| integrand(0.0, x, z))?;
    let psi_t = |t: f64| Ok(grid_integral(&|x, z| integrand(t, x, z), res));
    let numerical = one_sided_derivative(psi_t, false)?;
    let psi = psi_t(0.0)?;
    // E_P̃[φ(O, P)] with E_P̃(Y | x, z) = m̃.
    let phi_tilde = |x: f64, z: f64| {
        let a = ade_point(x, z, shift);
        let score = a.fx / a.f;
        let l = -weight.derivative(x) - weight.value(x) * score;
        a.ft * (l * (a.mt - a.m) + weight.value(x) * a.mx - psi)
    };
    let res_phi = 2 * converged_resolution(&phi_tilde)?;
    let analytic = grid_integral(&phi_tilde, res_phi);
    Ok((numerical.value, analytic, numerical.steps))
}

/// `t = 0` identity along a smooth path for the quantile, the tail
/// conditional expectation and the average derivative effect.
pub fn smooth_path_check(spec: &EstimandSpec, family: &SmoothFamily) -> Result<GateauxReport> {
    spec.validate()?;
    let (num, analytic, steps) = match (spec, family) {
        (EstimandSpec::Quantile { tau }, SmoothFamily::Normal { shift }) => quantile_check(*tau, *shift)?,
        (EstimandSpec::TailConditionalExpectation { threshold }, SmoothFamily::Normal { shift }) => {
            tail_check(*threshold, *shift)?
        }
        (EstimandSpec::AverageDerivativeEffect { weight }, SmoothFamily::BivariateNormal { shift }) => {
            ade_check(weight, *shift)?
        }
        _ => {
            return Err(Error::Argument(format!(
                "no smooth family {family:?} for {spec}"
            )))
        }
    };
    let abs_error = (num - analytic).abs();
    Ok(GateauxReport {
        spec: spec.clone(),
        identity: Identity::Smooth,
        contaminant: serde_json::to_string(family)?,
        numerical_derivative: num,
        analytic_value: analytic,
        abs_error,
        rel_error: abs_error / analytic.abs().max(1.0),
        steps,
        min_conditioning_mass: 1.0,
        flagged: false,
        skipped: false,
    })
}
