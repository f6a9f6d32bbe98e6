//! Center-manifold reduction at a Hopf point of the endemic equilibrium.
//!
//! Time is rescaled by the critical delay so the delay sits at `theta = -1`.
//! The eigenvalue on the imaginary axis is then `i omega tau`, and every
//! normal-form coefficient carries a factor `tau` from the rescaling.
//!
//! Vectors use the state order `(T, I, V_I, V_NI)`. The right eigenvector is
//! `q(0) = (1, a, b, c1)` and the adjoint is `q*(0) = D (1, a*, b*, 0)`.
//! Quadratic nonlinearities come from two sources: the logistic and infection
//! terms at the current time (first equation) and the delayed infection flux
//! (second equation).

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{endemic_equilibrium, basic_r0, ModelParams, TherapyEfficacies, N_STATE};
use crate::stability::{
    characteristic_derivative, characteristic_matrix, jacobians, CharCoefficients,
};

type CVec = [Complex64; N_STATE];

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// Eigenvectors of the linearized operator and its adjoint at a critical pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EigenData {
    pub a: Complex64,
    pub b: Complex64,
    pub c1: Complex64,
    pub a_star: Complex64,
    pub b_star: Complex64,
    /// Normalization making the bilinear pairing of `q*` and `q` equal to one.
    pub d_norm: Complex64,
    /// `F = r - d1 - 2 r T*/t_max - r I*/t_max - k alpha V_I*`.
    pub f_diag: f64,
    pub omega0: f64,
    pub tau: f64,
    /// `|M(i omega) q| / (|M| |q|)`.
    pub right_residual: f64,
    /// `|conj(q*) M(i omega)| / (|M| |q*|)`.
    pub left_residual: f64,
}

impl EigenData {
    pub fn q(&self) -> CVec {
        [c(1.0), self.a, self.b, self.c1]
    }

    /// Unnormalized adjoint vector `(1, a*, b*, 0)`.
    pub fn q_star_raw(&self) -> CVec {
        [c(1.0), self.a_star, self.b_star, c(0.0)]
    }
}

/// Equilibrium-dependent constants shared by the normal-form formulas.
#[derive(Debug, Clone, Copy)]
struct Frozen {
    t: f64,
    v: f64,
    k_alpha: f64,
    r_tm: f64,
    nf: f64,
    beta: f64,
    d2: f64,
    d3: f64,
    f_diag: f64,
    now: [[f64; N_STATE]; N_STATE],
    delayed: [[f64; N_STATE]; N_STATE],
}

fn freeze(p: &ModelParams, eff: &TherapyEfficacies) -> Result<Frozen> {
    let e2 = endemic_equilibrium(p, eff).ok_or(Error::NoEndemicEquilibrium {
        r0: basic_r0(p, eff),
    })?;
    let x = e2.state.to_array();
    let (now, delayed) = jacobians(&x, p, eff);
    let k_alpha = eff.infection_factor() * p.alpha();
    let r_tm = p.r() / p.t_max();
    let f_diag = p.r() - p.d1() - 2.0 * r_tm * x[0] - r_tm * x[1] - k_alpha * x[2];
    Ok(Frozen {
        t: x[0],
        v: x[2],
        k_alpha,
        r_tm,
        nf: eff.noninfectious_fraction(),
        beta: p.beta(),
        d2: p.d2(),
        d3: p.d3(),
        f_diag,
        now,
        delayed,
    })
}

fn vnorm(v: &CVec) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

fn mat_norm(m: &[[Complex64; N_STATE]; N_STATE]) -> f64 {
    m.iter()
        .flat_map(|row| row.iter())
        .map(|z| z.norm_sqr())
        .sum::<f64>()
        .sqrt()
}

/// Bilinear pairing `<psi, phi>` restricted to the eigenfunctions
/// `psi(s) = psi0 e^{i omega tau s}` and `phi(theta) = phi0 e^{i omega tau theta}`:
/// `conj(psi0) . phi0 + tau conj(psi0) . J_delayed phi0 e^{-i omega tau}`.
pub fn pairing(
    psi0: &CVec,
    phi0: &CVec,
    delayed: &[[f64; N_STATE]; N_STATE],
    omega0: f64,
    tau: f64,
) -> Complex64 {
    let direct: Complex64 = psi0.iter().zip(phi0).map(|(s, f)| s.conj() * f).sum();
    let mut jphi = [c(0.0); N_STATE];
    for (r, out) in jphi.iter_mut().enumerate() {
        *out = (0..N_STATE).map(|k| delayed[r][k] * phi0[k]).sum();
    }
    let memory: Complex64 = psi0.iter().zip(&jphi).map(|(s, f)| s.conj() * f).sum();
    direct + tau * memory * (-I * (omega0 * tau)).exp()
}

pub fn eigen_data(
    p: &ModelParams,
    eff: &TherapyEfficacies,
    omega0: f64,
    tau: f64,
) -> Result<EigenData> {
    let fz = freeze(p, eff)?;
    eigen_data_frozen(&fz, omega0, tau)
}

fn eigen_data_frozen(fz: &Frozen, omega0: f64, tau: f64) -> Result<EigenData> {
    let iw = I * omega0;
    let e_minus = (-I * (omega0 * tau)).exp();
    let e_plus = e_minus.conj();
    let gain = fz.k_alpha * (1.0 - fz.nf) * fz.beta * fz.t;

    let left = (iw + fz.d2) * (iw + fz.d3);
    let denom = left - gain * e_minus;
    let scale = left.norm() + gain;
    if denom.norm() < 1e-12 * scale {
        return Err(Error::Degenerate(format!(
            "eigenvector denominator {:e} vanishes relative to scale {scale:e}",
            denom.norm()
        )));
    }
    let a = (iw + fz.d3) * fz.k_alpha * fz.v * e_minus / denom;
    let b = (1.0 - fz.nf) * fz.beta * a / (iw + fz.d3);
    let c1 = fz.nf * fz.beta * a / (iw + fz.d3);

    let a_star = -(iw + fz.f_diag) / (fz.k_alpha * fz.v * e_plus);
    let b_star = (fz.r_tm * fz.t + (fz.d2 - iw) * a_star) / ((1.0 - fz.nf) * fz.beta);

    let q = [c(1.0), a, b, c1];
    let q_star = [c(1.0), a_star, b_star, c(0.0)];
    let bracket = pairing(&q_star, &q, &fz.delayed, omega0, tau);
    if bracket.norm() < 1e-12 * vnorm(&q) * vnorm(&q_star) {
        return Err(Error::Degenerate("adjoint pairing vanishes".into()));
    }
    // pairing(D q*, q) = conj(D) * bracket = 1
    let d_norm = (1.0 / bracket).conj();

    let m = characteristic_matrix(iw, tau, &fz.now, &fz.delayed);
    let mnorm = mat_norm(&m);
    let right_residual = vnorm(&linalg::mat_vec(&m, &q)) / (mnorm * vnorm(&q));
    let mut row = [c(0.0); N_STATE];
    for (col, out) in row.iter_mut().enumerate() {
        *out = (0..N_STATE).map(|r| q_star[r].conj() * m[r][col]).sum();
    }
    let left_residual = vnorm(&row) / (mnorm * vnorm(&q_star));
    if right_residual > 1e-9 || left_residual > 1e-9 {
        return Err(Error::Degenerate(format!(
            "({omega0}, {tau}) is not a critical pair: eigen-residuals {right_residual:e}, {left_residual:e}"
        )));
    }

    Ok(EigenData {
        a,
        b,
        c1,
        a_star,
        b_star,
        d_norm,
        f_diag: fz.f_diag,
        omega0,
        tau,
        right_residual,
        left_residual,
    })
}

/// Normal-form coefficients and the constant parts of the center-manifold
/// expansion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CenterManifoldCoefficients {
    pub g20: Complex64,
    pub g11: Complex64,
    pub g02: Complex64,
    pub g21: Complex64,
    /// Constant vector of the `z^2` manifold term.
    pub e1_vec: CVec,
    /// Constant vector of the `z zbar` manifold term; real.
    pub e2_vec: [f64; N_STATE],
    pub w20_0: CVec,
    pub w20_m1: CVec,
    pub w11_0: CVec,
    pub w11_m1: CVec,
    pub e1_condition: f64,
    pub e2_condition: f64,
    pub e1_residual: f64,
    pub e2_residual: f64,
}

/// Second-order part of the first equation at the current time.
fn quad_now(fz: &Frozen, u: &CVec, v: &CVec) -> Complex64 {
    -fz.r_tm * (2.0 * u[0] * v[0] + u[0] * v[1] + u[1] * v[0])
        - fz.k_alpha * (u[0] * v[2] + u[2] * v[0])
}

/// Second-order part of the delayed infection flux.
fn quad_delayed(fz: &Frozen, u: &CVec, v: &CVec) -> Complex64 {
    fz.k_alpha * (u[0] * v[2] + u[2] * v[0])
}

fn scale_vec(v: &CVec, s: Complex64) -> CVec {
    [v[0] * s, v[1] * s, v[2] * s, v[3] * s]
}

fn conj_vec(v: &CVec) -> CVec {
    [v[0].conj(), v[1].conj(), v[2].conj(), v[3].conj()]
}

pub fn g_coefficients(
    ed: &EigenData,
    p: &ModelParams,
    eff: &TherapyEfficacies,
    omega0: f64,
    tau: f64,
) -> Result<CenterManifoldCoefficients> {
    let fz = freeze(p, eff)?;
    g_coefficients_frozen(ed, &fz, omega0, tau)
}

fn g_coefficients_frozen(
    ed: &EigenData,
    fz: &Frozen,
    omega0: f64,
    tau: f64,
) -> Result<CenterManifoldCoefficients> {
    let wt = omega0 * tau;
    let e1 = (-I * wt).exp();
    let e2 = (-I * (2.0 * wt)).exp();
    let (a, b) = (ed.a, ed.b);
    let a_star_bar = ed.a_star.conj();
    let d_bar = ed.d_norm.conj();
    let (r_tm, ka) = (fz.r_tm, fz.k_alpha);

    let g20 = -2.0 * tau * d_bar * ((1.0 + a) * r_tm + ka * b - ka * a_star_bar * b * e2);
    let g11 = -2.0 * tau * d_bar * ((1.0 + a.re) * r_tm + ka * b.re - ka * a_star_bar * b.re);
    let g02 = -2.0
        * tau
        * d_bar
        * ((1.0 + a.conj()) * r_tm + ka * b.conj() - ka * a_star_bar * b.conj() * e2.conj());

    let q0 = ed.q();
    let q0b = conj_vec(&q0);

    // M(2 i omega) e1_vec = (B_now(q, q), B_delayed(q e^{-iwt}, q e^{-iwt}), 0, 0)
    let m20 = characteristic_matrix(I * (2.0 * omega0), tau, &fz.now, &fz.delayed);
    let rhs20 = [
        2.0 * (-(1.0 + a) * r_tm - ka * b),
        2.0 * ka * b * e2,
        c(0.0),
        c(0.0),
    ];
    let sol20 = linalg::solve(&m20, &rhs20)?;

    let m11 = characteristic_matrix(c(0.0), tau, &fz.now, &fz.delayed);
    let rhs11 = [
        c(2.0 * (-(1.0 + a.re) * r_tm - ka * b.re)),
        c(2.0 * ka * b.re),
        c(0.0),
        c(0.0),
    ];
    let sol11 = linalg::solve(&m11, &rhs11)?;
    for (name, res) in [("e1_vec", sol20.relative_residual), ("e2_vec", sol11.relative_residual)] {
        if res > 1e-10 {
            return Err(Error::Degenerate(format!("{name} solve residual {res:e}")));
        }
    }
    let e1_vec = sol20.x;
    let e2_vec = [sol11.x[0].re, sol11.x[1].re, sol11.x[2].re, sol11.x[3].re];

    let w20 = |theta: f64| -> CVec {
        let p1 = I * g20 / wt * (I * (wt * theta)).exp();
        let p2 = I * g02.conj() / (3.0 * wt) * (-I * (wt * theta)).exp();
        let p3 = (I * (2.0 * wt * theta)).exp();
        std::array::from_fn(|k| p1 * q0[k] + p2 * q0b[k] + p3 * e1_vec[k])
    };
    let w11 = |theta: f64| -> CVec {
        let p1 = -I * g11 / wt * (I * (wt * theta)).exp();
        let p2 = I * g11.conj() / wt * (-I * (wt * theta)).exp();
        std::array::from_fn(|k| p1 * q0[k] + p2 * q0b[k] + e2_vec[k])
    };
    let (w20_0, w20_m1, w11_0, w11_m1) = (w20(0.0), w20(-1.0), w11(0.0), w11(-1.0));

    let qd = scale_vec(&q0, e1);
    let qdb = conj_vec(&qd);
    let now_part = 2.0 * quad_now(fz, &q0, &w11_0) + quad_now(fz, &q0b, &w20_0);
    let del_part = 2.0 * quad_delayed(fz, &qd, &w11_m1) + quad_delayed(fz, &qdb, &w20_m1);
    let g21 = tau * d_bar * (now_part + a_star_bar * del_part);

    Ok(CenterManifoldCoefficients {
        g20,
        g11,
        g02,
        g21,
        e1_vec,
        e2_vec,
        w20_0,
        w20_m1,
        w11_0,
        w11_m1,
        e1_condition: sol20.condition,
        e2_condition: sol11.condition,
        e1_residual: sol20.relative_residual,
        e2_residual: sol11.relative_residual,
    })
}

/// `d lambda / d tau` at `lambda = i omega0`, `tau = tau_j`.
pub fn lambda_prime(cc: &CharCoefficients, omega0: f64, tau: f64) -> Result<Complex64> {
    let lambda = I * omega0;
    let e = (-lambda * tau).exp();
    let num = lambda * (cc.b1 * lambda + cc.b2) * e;
    let den = characteristic_derivative(lambda, cc, tau);
    if den.norm() <= 1e-14 * cc.scale_at(omega0).max(1.0) {
        return Err(Error::Degenerate(format!(
            "root at i*{omega0} is not simple (dH/dlambda = {den})"
        )));
    }
    Ok(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BifurcationDirection {
    /// Periodic solutions exist for delays above the critical value.
    Forward,
    Backward,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CycleStability {
    Stable,
    Unstable,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PeriodTrend {
    Increasing,
    Decreasing,
    Undetermined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopfSummary {
    pub c11_0: Complex64,
    pub mu2: f64,
    pub beta2: f64,
    pub t2: f64,
    pub lambda_prime: Complex64,
    pub direction: BifurcationDirection,
    pub cycle: CycleStability,
    pub period: PeriodTrend,
}

pub fn hopf_summary(
    cmc: &CenterManifoldCoefficients,
    lp: Complex64,
    omega0: f64,
    tau: f64,
) -> HopfSummary {
    let wt = omega0 * tau;
    let c11_0 = I / (2.0 * wt)
        * (cmc.g20 * cmc.g11 - 2.0 * cmc.g11.norm_sqr() - cmc.g02.norm_sqr() / 3.0)
        + cmc.g21 / 2.0;
    let mu2 = -c11_0.re / lp.re;
    let beta2 = 2.0 * c11_0.re;
    let t2 = -(c11_0.im + mu2 * lp.im) / wt;
    let direction = match mu2.partial_cmp(&0.0) {
        Some(std::cmp::Ordering::Greater) => BifurcationDirection::Forward,
        Some(std::cmp::Ordering::Less) => BifurcationDirection::Backward,
        _ => BifurcationDirection::Undetermined,
    };
    let cycle = match beta2.partial_cmp(&0.0) {
        Some(std::cmp::Ordering::Less) => CycleStability::Stable,
        Some(std::cmp::Ordering::Greater) => CycleStability::Unstable,
        _ => CycleStability::Undetermined,
    };
    let period = match t2.partial_cmp(&0.0) {
        Some(std::cmp::Ordering::Greater) => PeriodTrend::Increasing,
        Some(std::cmp::Ordering::Less) => PeriodTrend::Decreasing,
        _ => PeriodTrend::Undetermined,
    };
    HopfSummary {
        c11_0,
        mu2,
        beta2,
        t2,
        lambda_prime: lp,
        direction,
        cycle,
        period,
    }
}

/// Everything computed at one critical pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HopfAnalysis {
    pub eigen: EigenData,
    pub coefficients: CenterManifoldCoefficients,
    pub summary: HopfSummary,
}

/// Runs the full reduction at `(omega0, tau)`.
pub fn analyze(
    p: &ModelParams,
    eff: &TherapyEfficacies,
    cc: &CharCoefficients,
    omega0: f64,
    tau: f64,
) -> Result<HopfAnalysis> {
    let fz = freeze(p, eff)?;
    let eigen = eigen_data_frozen(&fz, omega0, tau)?;
    let coefficients = g_coefficients_frozen(&eigen, &fz, omega0, tau)?;
    let lp = lambda_prime(cc, omega0, tau)?;
    Ok(HopfAnalysis {
        eigen,
        coefficients,
        summary: hopf_summary(&coefficients, lp, omega0, tau),
    })
}
