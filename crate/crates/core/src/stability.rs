//! Linear stability of the two steady states.
//!
//! About the endemic point the characteristic equation factors as
//! `(lambda + d3) * H(lambda, tau)` with
//!
//! ```text
//! H(lambda, tau) = lambda^3 + a0 lambda^2 + a1 lambda + a2 + (b1 lambda + b2) e^{-lambda tau}
//! ```
//!
//! Purely imaginary roots `i omega` of `H` satisfy the cubic in `x = omega^2`
//! `x^3 + A1 x^2 + A2 x + A3 = 0`; each positive root yields a ladder of
//! critical delays at which a root pair crosses the imaginary axis.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    basic_r0, endemic_equilibrium, uninfected_equilibrium, ModelParams, StateVec,
    TherapyEfficacies, N_STATE,
};

/// Tolerance on the relative residual of the `omega^2` cubic.
pub const POLY_RESIDUAL_TOL: f64 = 1e-9;
/// Tolerance on the scaled residual of the transcendental equation.
pub const TRANSCENDENTAL_RESIDUAL_TOL: f64 = 1e-8;

pub type Matrix4 = [[f64; N_STATE]; N_STATE];

/// Jacobians of the vector field at `x` with respect to the current state
/// and the delayed state.
pub fn jacobians(x: &StateVec, p: &ModelParams, eff: &TherapyEfficacies) -> (Matrix4, Matrix4) {
    let [t, i, v, _] = *x;
    let k = eff.infection_factor();
    let nf = eff.noninfectious_fraction();
    let ka = k * p.alpha();
    let rt = p.r() / p.t_max();
    let now = [
        [
            p.r() - p.d1() - 2.0 * rt * t - rt * i - ka * v,
            -rt * t,
            -ka * t,
            0.0,
        ],
        [0.0, -p.d2(), 0.0, 0.0],
        [0.0, (1.0 - nf) * p.beta(), -p.d3(), 0.0],
        [0.0, nf * p.beta(), 0.0, -p.d3()],
    ];
    let mut delayed = [[0.0; N_STATE]; N_STATE];
    delayed[1][0] = ka * v;
    delayed[1][2] = ka * t;
    (now, delayed)
}

/// `lambda I - J_now - J_delayed e^{-lambda tau}`.
pub fn characteristic_matrix(
    lambda: Complex64,
    tau: f64,
    now: &Matrix4,
    delayed: &Matrix4,
) -> [[Complex64; N_STATE]; N_STATE] {
    let e = (-lambda * tau).exp();
    let mut m = [[Complex64::new(0.0, 0.0); N_STATE]; N_STATE];
    for r in 0..N_STATE {
        for c in 0..N_STATE {
            m[r][c] = -(now[r][c] + delayed[r][c] * e);
        }
        m[r][r] += lambda;
    }
    m
}

/// Coefficients of the reduced endemic characteristic equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CharCoefficients {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub b1: f64,
    pub b2: f64,
}

impl CharCoefficients {
    /// Requires `a0, a1, a2 > 0`.
    pub fn new(a0: f64, a1: f64, a2: f64, b1: f64, b2: f64) -> Result<Self> {
        for (name, v) in [("a0", a0), ("a1", a1), ("a2", a2)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParameter {
                    name,
                    value: v,
                    reason: "must be finite and strictly positive",
                });
            }
        }
        for (name, v) in [("b1", b1), ("b2", b2)] {
            if !v.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    value: v,
                    reason: "must be finite",
                });
            }
        }
        Ok(Self { a0, a1, a2, b1, b2 })
    }

    /// Magnitude of the largest term of `H` at frequency `omega`.
    pub fn scale_at(&self, omega: f64) -> f64 {
        let w = omega.abs();
        [
            w.powi(3),
            self.a0 * w * w,
            self.a1 * w,
            self.a2,
            self.b1.abs() * w,
            self.b2.abs(),
        ]
        .into_iter()
        .fold(0.0, f64::max)
    }
}

/// Evaluates the closed-form coefficients at the endemic point.
pub fn char_coefficients(p: &ModelParams, eff: &TherapyEfficacies) -> Result<CharCoefficients> {
    let e2 = endemic_equilibrium(p, eff).ok_or(Error::NoEndemicEquilibrium {
        r0: basic_r0(p, eff),
    })?;
    let t = e2.state.t_cells();
    let i = e2.state.i_cells();
    let (d2, d3) = (p.d2(), p.d3());
    let gain = eff.infection_factor() * (1.0 - eff.noninfectious_fraction()) * p.alpha() * p.beta();
    // Loss rate of target cells at E2, equal to -J[0][0].
    let q = p.s() / t + p.r() * t / p.t_max();
    let a0 = d2 + d3 + q;
    let a1 = d2 * d3 + (d2 + d3) * q;
    let a2 = d2 * d3 * q;
    let b1 = d2 * p.r() * i / p.t_max() - gain * t;
    let b2 = d2 * d3 * p.r() * i / p.t_max()
        + (d2 * i - p.s() - p.r() * t * t / p.t_max()) * gain;
    CharCoefficients::new(a0, a1, a2, b1, b2)
}

/// `H(lambda, tau)`.
pub fn characteristic_residual(lambda: Complex64, cc: &CharCoefficients, tau: f64) -> Complex64 {
    let poly = ((lambda + cc.a0) * lambda + cc.a1) * lambda + cc.a2;
    poly + (cc.b1 * lambda + cc.b2) * (-lambda * tau).exp()
}

/// `dH/dlambda`.
pub fn characteristic_derivative(lambda: Complex64, cc: &CharCoefficients, tau: f64) -> Complex64 {
    let e = (-lambda * tau).exp();
    (3.0 * lambda + 2.0 * cc.a0) * lambda + cc.a1 + (cc.b1 - tau * (cc.b1 * lambda + cc.b2)) * e
}

/// Newton iteration for a root of `H(., tau)` starting at `guess`.
pub fn refine_root(cc: &CharCoefficients, tau: f64, guess: Complex64) -> Result<Complex64> {
    let mut z = guess;
    for _ in 0..100 {
        let f = characteristic_residual(z, cc, tau);
        let df = characteristic_derivative(z, cc, tau);
        if df.norm() == 0.0 {
            break;
        }
        let step = f / df;
        z -= step;
        if step.norm() <= 1e-15 * z.norm().max(1e-300) {
            return Ok(z);
        }
    }
    let f = characteristic_residual(z, cc, tau);
    if f.norm() <= 1e-12 * cc.scale_at(z.norm()) {
        Ok(z)
    } else {
        Err(Error::Degenerate(format!(
            "root refinement did not converge from {guess} (|H| = {:e})",
            f.norm()
        )))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum E1Verdict {
    Stable,
    Unstable,
    /// `R0 == 1` to within rounding.
    Boundary,
}

/// Local stability of the disease-free point, which does not depend on the
/// delay: stable iff `R0 < 1`.
pub fn e1_verdict(p: &ModelParams, eff: &TherapyEfficacies) -> E1Verdict {
    let r0 = basic_r0(p, eff);
    if (r0 - 1.0).abs() <= 1e-12 {
        E1Verdict::Boundary
    } else if r0 < 1.0 {
        E1Verdict::Stable
    } else {
        E1Verdict::Unstable
    }
}

/// The two eigenvalues of the disease-free point that do not depend on the
/// delay: the target-cell relaxation rate and `-d3`.
pub fn e1_fixed_eigenvalues(p: &ModelParams) -> [f64; 2] {
    let t_hat = uninfected_equilibrium(p);
    [p.r() - p.d1() - 2.0 * p.r() * t_hat / p.t_max(), -p.d3()]
}

/// Residual of the delay-dependent factor at the disease-free point,
/// `lambda^2 + (d2 + d3) lambda + d2 d3 (1 - R0 e^{-lambda tau})`.
pub fn e1_characteristic_residual(
    lambda: Complex64,
    p: &ModelParams,
    eff: &TherapyEfficacies,
    tau: f64,
) -> Complex64 {
    let (d2, d3) = (p.d2(), p.d3());
    let r0 = basic_r0(p, eff);
    lambda * lambda + (d2 + d3) * lambda + d2 * d3 * (1.0 - r0 * (-lambda * tau).exp())
}

fn e1_characteristic_derivative(
    lambda: Complex64,
    p: &ModelParams,
    eff: &TherapyEfficacies,
    tau: f64,
) -> Complex64 {
    let (d2, d3) = (p.d2(), p.d3());
    let r0 = basic_r0(p, eff);
    2.0 * lambda + (d2 + d3) + d2 * d3 * r0 * tau * (-lambda * tau).exp()
}

/// Unique non-negative real root of the disease-free factor, if any.
///
/// On `lambda >= 0` the polynomial part increases and the delayed part
/// decreases, so the difference is monotone and bisection suffices.
pub fn e1_positive_real_root(p: &ModelParams, eff: &TherapyEfficacies, tau: f64) -> Option<f64> {
    let g = |x: f64| e1_characteristic_residual(Complex64::new(x, 0.0), p, eff, tau).re;
    if g(0.0) > 0.0 {
        return None;
    }
    let mut hi = 1.0f64;
    while g(hi) < 0.0 {
        hi *= 2.0;
        if hi > 1e12 {
            return None;
        }
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Roots of the disease-free factor with non-negative real part, found by
/// Newton iteration from a grid covering the region where such roots can lie.
///
/// For `Re lambda >= 0`, `|e^{-lambda tau}| <= 1`, so every such root has
/// modulus below the positive root of `x^2 - (d2 + d3) x - d2 d3 (1 + R0)`.
pub fn e1_right_half_plane_roots(
    p: &ModelParams,
    eff: &TherapyEfficacies,
    tau: f64,
) -> Vec<Complex64> {
    let (d2, d3) = (p.d2(), p.d3());
    let r0 = basic_r0(p, eff);
    let sum = d2 + d3;
    let radius = 0.5 * (sum + (sum * sum + 4.0 * d2 * d3 * (1.0 + r0)).sqrt());
    let mut found: Vec<Complex64> = Vec::new();
    let n_re = 24;
    let n_im = 48;
    for a in 0..=n_re {
        for b in 0..=n_im {
            let z0 = Complex64::new(
                radius * a as f64 / n_re as f64,
                radius * b as f64 / n_im as f64,
            );
            let mut z = z0;
            let mut converged = false;
            for _ in 0..60 {
                let f = e1_characteristic_residual(z, p, eff, tau);
                let df = e1_characteristic_derivative(z, p, eff, tau);
                if df.norm() == 0.0 || !z.re.is_finite() {
                    break;
                }
                let step = f / df;
                z -= step;
                if step.norm() <= 1e-14 * z.norm().max(1e-12) {
                    converged = true;
                    break;
                }
            }
            if !converged || z.re < -1e-12 * radius || z.norm() > 2.0 * radius {
                continue;
            }
            let res = e1_characteristic_residual(z, p, eff, tau).norm();
            if res > 1e-9 * (radius * radius + d2 * d3 * (1.0 + r0)) {
                continue;
            }
            let z = if z.im < 0.0 { z.conj() } else { z };
            if !found.iter().any(|w| (w - z).norm() <= 1e-8 * radius) {
                found.push(z);
            }
        }
    }
    if let Some(x) = e1_positive_real_root(p, eff, tau) {
        let z = Complex64::new(x, 0.0);
        if !found.iter().any(|w| (w - z).norm() <= 1e-8 * radius) {
            found.push(z);
        }
    }
    found
}

/// Routh-Hurwitz test of the delay-free cubic
/// `lambda^3 + a0 lambda^2 + (a1 + b1) lambda + (a2 + b2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RouthHurwitz {
    pub a0_positive: bool,
    pub a1_plus_b1_positive: bool,
    pub a2_plus_b2_positive: bool,
    /// `a0 (a1 + b1) - (a2 + b2)`.
    pub expression: f64,
    pub stable: bool,
}

pub fn routh_hurwitz_zero_delay(cc: &CharCoefficients) -> RouthHurwitz {
    let s1 = cc.a1 + cc.b1;
    let s2 = cc.a2 + cc.b2;
    let expression = cc.a0 * s1 - s2;
    let a0_positive = cc.a0 > 0.0;
    let a1_plus_b1_positive = s1 > 0.0;
    let a2_plus_b2_positive = s2 > 0.0;
    RouthHurwitz {
        a0_positive,
        a1_plus_b1_positive,
        a2_plus_b2_positive,
        expression,
        stable: a0_positive && a1_plus_b1_positive && a2_plus_b2_positive && expression > 0.0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmegaRoot {
    /// Crossing frequency (rad/day).
    pub omega: f64,
    pub simple: bool,
    /// `|h(omega^2)|` divided by the sum of the magnitudes of its terms.
    pub relative_residual: f64,
}

/// Positive crossing frequencies of the endemic characteristic equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaAnalysis {
    /// `(A1, A2, A3)`.
    pub a_coeffs: [f64; 3],
    /// Sorted by decreasing `omega`.
    pub positive_roots: Vec<OmegaRoot>,
    /// Largest positive simple root.
    pub omega0: Option<f64>,
}

fn omega_poly(a: &[f64; 3], x: f64) -> (f64, f64) {
    let value = ((x + a[0]) * x + a[1]) * x + a[2];
    let gross = x.abs().powi(3) + a[0].abs() * x * x + a[1].abs() * x.abs() + a[2].abs();
    (value, gross)
}

pub fn omega_analysis(cc: &CharCoefficients) -> OmegaAnalysis {
    let a1 = cc.a0 * cc.a0 - 2.0 * cc.a1;
    let a2 = cc.a1 * cc.a1 - cc.b1 * cc.b1 - 2.0 * cc.a0 * cc.a2;
    let a3 = cc.a2 * cc.a2 - cc.b2 * cc.b2;
    let a = [a1, a2, a3];

    let roots = linalg::monic_cubic_roots(a1, a2, a3);
    let magnitude = roots.iter().map(|z| z.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);

    // Real candidates, including near-real pairs that a double root splits into.
    let mut xs: Vec<(f64, bool)> = Vec::new();
    for z in roots {
        let tight = z.im.abs() <= POLY_RESIDUAL_TOL * z.norm().max(f64::MIN_POSITIVE);
        let loose = z.im.abs() <= 1e-6 * magnitude;
        if tight || loose {
            xs.push((z.re, tight));
        }
    }
    xs.sort_by(|l, r| r.0.partial_cmp(&l.0).unwrap());

    let mut positive_roots: Vec<OmegaRoot> = Vec::new();
    let mut i = 0;
    while i < xs.len() {
        let mut j = i + 1;
        while j < xs.len() && (xs[i].0 - xs[j].0).abs() <= 1e-7 * xs[i].0.abs().max(f64::MIN_POSITIVE)
        {
            j += 1;
        }
        let cluster = &xs[i..j];
        let simple = cluster.len() == 1 && cluster[0].1;
        let x = cluster.iter().map(|c| c.0).sum::<f64>() / cluster.len() as f64;
        if x > 0.0 {
            let x = if simple { polish_real(&a, x) } else { x };
            let (value, gross) = omega_poly(&a, x);
            positive_roots.push(OmegaRoot {
                omega: x.sqrt(),
                simple,
                relative_residual: (value / gross).abs(),
            });
        }
        i = j;
    }
    let omega0 = positive_roots.iter().find(|r| r.simple).map(|r| r.omega);
    OmegaAnalysis {
        a_coeffs: a,
        positive_roots,
        omega0,
    }
}

fn polish_real(a: &[f64; 3], mut x: f64) -> f64 {
    for _ in 0..4 {
        let (v, _) = omega_poly(a, x);
        let dv = (3.0 * x + 2.0 * a[0]) * x + a[1];
        if dv == 0.0 {
            break;
        }
        let next = x - v / dv;
        if omega_poly(a, next).0.abs() < v.abs() {
            x = next;
        } else {
            break;
        }
    }
    x
}

/// `cos(omega tau)` and `sin(omega tau)` at a crossing.
pub fn crossing_phase(cc: &CharCoefficients, omega: f64) -> (f64, f64) {
    let w = omega;
    let re = cc.a0 * w * w - cc.a2;
    let im = w * w * w - cc.a1 * w;
    let denom = cc.b2 * cc.b2 + (cc.b1 * w) * (cc.b1 * w);
    let cos = (re * cc.b2 + im * cc.b1 * w) / denom;
    let sin = (re * cc.b1 * w - im * cc.b2) / denom;
    (cos, sin)
}

/// Critical delays `tau_0 < tau_1 < ... < tau_jmax` (days) for a crossing
/// frequency `omega0`. The arccos branch is chosen so the sine equation holds
/// as well.
pub fn critical_delays(cc: &CharCoefficients, omega0: f64, j_max: usize) -> Result<Vec<f64>> {
    if !(omega0.is_finite() && omega0 > 0.0) {
        return Err(Error::InvalidParameter {
            name: "omega0",
            value: omega0,
            reason: "must be finite and positive",
        });
    }
    let (cos, sin) = crossing_phase(cc, omega0);
    if !cos.is_finite() || cos.abs() > 1.0 + 1e-9 {
        return Err(Error::ArccosOutOfRange { value: cos });
    }
    let mut theta = cos.clamp(-1.0, 1.0).acos();
    if sin < 0.0 {
        theta = 2.0 * PI - theta;
    }
    let base = theta / omega0;
    let period = 2.0 * PI / omega0;
    let lambda = Complex64::new(0.0, omega0);
    let scale = cc.scale_at(omega0);
    let mut out = Vec::with_capacity(j_max + 1);
    for j in 0..=j_max {
        let tau = base + j as f64 * period;
        let res = characteristic_residual(lambda, cc, tau).norm();
        if res > TRANSCENDENTAL_RESIDUAL_TOL * scale {
            return Err(Error::Degenerate(format!(
                "tau_{j} = {tau} leaves characteristic residual {res:e} (scale {scale:e})"
            )));
        }
        out.push(tau);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CrossingSign {
    Positive,
    Negative,
    Degenerate,
}

/// `2 omega^6 + (a0^2 - 2 a1) omega^4 + (b2^2 - a2^2)` together with the
/// sum of its term magnitudes.
pub fn transversality_expression(cc: &CharCoefficients, omega0: f64) -> (f64, f64) {
    let w2 = omega0 * omega0;
    let w4 = w2 * w2;
    let w6 = w4 * w2;
    let a1 = cc.a0 * cc.a0 - 2.0 * cc.a1;
    let d = cc.b2 * cc.b2 - cc.a2 * cc.a2;
    (2.0 * w6 + a1 * w4 + d, 2.0 * w6 + a1.abs() * w4 + d.abs())
}

/// Direction in which the root pair crosses the imaginary axis as the delay
/// increases through a critical value.
pub fn transversality(cc: &CharCoefficients, omega0: f64) -> CrossingSign {
    let (value, gross) = transversality_expression(cc, omega0);
    if value.abs() <= 1e-12 * gross {
        CrossingSign::Degenerate
    } else if value > 0.0 {
        CrossingSign::Positive
    } else {
        CrossingSign::Negative
    }
}

/// Sufficient delay bound for linear stability of the endemic point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelayBound {
    pub mu_plus: f64,
    pub n1: f64,
    pub n2: f64,
    pub n3: f64,
    /// Days.
    pub tau_plus: f64,
}

pub fn delay_length_bound(cc: &CharCoefficients) -> Result<DelayBound> {
    if !routh_hurwitz_zero_delay(cc).stable {
        return Err(Error::BoundNotApplicable {
            reason: "the delay-free equilibrium is not Routh-Hurwitz stable".into(),
        });
    }
    let a0 = cc.a0;
    let ab1 = cc.b1.abs();
    let c = cc.a2.abs() + cc.b2.abs();
    let mu_plus = (ab1 + (cc.b1 * cc.b1 + 4.0 * a0 * c).sqrt()) / (2.0 * a0);
    let mu2 = mu_plus * mu_plus;
    let n1 = 0.5 * (cc.b2 - a0 * cc.b1).abs() * mu2;
    let n2 = cc.b1 * mu2 + a0 * cc.b2;
    let n3 = a0 * cc.a1 - cc.a2 - cc.b2 + a0 * cc.b1;
    if n3.is_nan() || n3 <= 0.0 {
        return Err(Error::BoundNotApplicable {
            reason: format!("N3 = {n3:e} is not positive"),
        });
    }
    let tau_plus = if n1 > 0.0 {
        // Stable form of (-N2 + sqrt(N2^2 + 4 N1 N3)) / (2 N1).
        let disc = (n2 * n2 + 4.0 * n1 * n3).sqrt();
        if n2 >= 0.0 {
            2.0 * n3 / (n2 + disc)
        } else {
            (disc - n2) / (2.0 * n1)
        }
    } else if n2 > 0.0 {
        n3 / n2
    } else {
        return Err(Error::BoundNotApplicable {
            reason: "N1 = 0 and N2 <= 0: the bound is unbounded".into(),
        });
    };
    Ok(DelayBound {
        mu_plus,
        n1,
        n2,
        n3,
        tau_plus,
    })
}
