//! Parameters, vector field and steady states of the four-compartment
//! delay model.
//!
//! State variables, all per ml:
//!
//! | Index | Symbol | Meaning                     |
//! |-------|--------|-----------------------------|
//! | 0     | T      | uninfected hepatocytes      |
//! | 1     | I      | productively infected cells |
//! | 2     | V_I    | infectious virions          |
//! | 3     | V_NI   | noninfectious virions       |
//!
//! Rates are per day throughout. The only delayed quantity is the infection
//! flux `V_I(t - tau) * T(t - tau)` feeding the infected compartment.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of state variables.
pub const N_STATE: usize = 4;

/// Plain state vector used by the numerical kernels.
pub type StateVec = [f64; N_STATE];

fn positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be finite and strictly positive",
        })
    }
}

/// The eight biological constants of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct ModelParams {
    s: f64,
    r: f64,
    t_max: f64,
    alpha: f64,
    beta: f64,
    d1: f64,
    d2: f64,
    d3: f64,
}

#[derive(Serialize, Deserialize)]
struct RawParams {
    s: f64,
    r: f64,
    t_max: f64,
    alpha: f64,
    beta: f64,
    d1: f64,
    d2: f64,
    d3: f64,
}

impl TryFrom<RawParams> for ModelParams {
    type Error = Error;
    fn try_from(p: RawParams) -> Result<Self> {
        ModelParams::new(p.s, p.r, p.t_max, p.alpha, p.beta, p.d1, p.d2, p.d3)
    }
}

impl From<ModelParams> for RawParams {
    fn from(p: ModelParams) -> Self {
        RawParams {
            s: p.s,
            r: p.r,
            t_max: p.t_max,
            alpha: p.alpha,
            beta: p.beta,
            d1: p.d1,
            d2: p.d2,
            d3: p.d3,
        }
    }
}

impl ModelParams {
    /// Validates and builds a parameter set.
    ///
    /// Requires every constant strictly positive and `r > d1`. The
    /// realism condition `s <= d1 * t_max` is reported by
    /// [`ModelParams::source_is_realistic`] rather than enforced; the
    /// `table2` preset violates it.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        s: f64,
        r: f64,
        t_max: f64,
        alpha: f64,
        beta: f64,
        d1: f64,
        d2: f64,
        d3: f64,
    ) -> Result<Self> {
        positive("s", s)?;
        positive("r", r)?;
        positive("t_max", t_max)?;
        positive("alpha", alpha)?;
        positive("beta", beta)?;
        positive("d1", d1)?;
        positive("d2", d2)?;
        positive("d3", d3)?;
        if r <= d1 {
            return Err(Error::InvalidParameter {
                name: "r",
                value: r,
                reason: "must exceed d1",
            });
        }
        Ok(Self {
            s,
            r,
            t_max,
            alpha,
            beta,
            d1,
            d2,
            d3,
        })
    }

    pub fn s(&self) -> f64 {
        self.s
    }
    pub fn r(&self) -> f64 {
        self.r
    }
    pub fn t_max(&self) -> f64 {
        self.t_max
    }
    pub fn alpha(&self) -> f64 {
        self.alpha
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn d1(&self) -> f64 {
        self.d1
    }
    pub fn d2(&self) -> f64 {
        self.d2
    }
    pub fn d3(&self) -> f64 {
        self.d3
    }

    /// `s <= d1 * t_max`: the hepatocyte source cannot exceed what natural
    /// death removes at carrying capacity.
    pub fn source_is_realistic(&self) -> bool {
        self.s <= self.d1 * self.t_max
    }

    /// Target-cell level of an untreated chronic infection, `d2 d3 / (alpha beta)`.
    pub fn untreated_target_level(&self) -> f64 {
        self.d2 * self.d3 / (self.alpha * self.beta)
    }
}

/// Drug efficacies of interferon (`eta1`), ribavirin (`eta_r`) and the
/// attenuation `c` of interferon's infection-blocking effect.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawEfficacies", into = "RawEfficacies")]
pub struct TherapyEfficacies {
    eta1: f64,
    eta_r: f64,
    c: f64,
}

#[derive(Serialize, Deserialize)]
struct RawEfficacies {
    eta1: f64,
    eta_r: f64,
    c: f64,
}

impl TryFrom<RawEfficacies> for TherapyEfficacies {
    type Error = Error;
    fn try_from(e: RawEfficacies) -> Result<Self> {
        TherapyEfficacies::new(e.eta1, e.eta_r, e.c)
    }
}

impl From<TherapyEfficacies> for RawEfficacies {
    fn from(e: TherapyEfficacies) -> Self {
        RawEfficacies {
            eta1: e.eta1,
            eta_r: e.eta_r,
            c: e.c,
        }
    }
}

impl TherapyEfficacies {
    /// `0 <= eta1 < 1`, `0 <= eta_r < 1`, `0 < c < 1`. Zero efficacies model
    /// the untreated infection.
    pub fn new(eta1: f64, eta_r: f64, c: f64) -> Result<Self> {
        let unit = |name, v: f64| {
            if v.is_finite() && (0.0..1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    value: v,
                    reason: "must lie in [0, 1)",
                })
            }
        };
        unit("eta1", eta1)?;
        unit("eta_r", eta_r)?;
        if !(c.is_finite() && c > 0.0 && c < 1.0) {
            return Err(Error::InvalidParameter {
                name: "c",
                value: c,
                reason: "must lie in (0, 1)",
            });
        }
        Ok(Self { eta1, eta_r, c })
    }

    /// No drug on board.
    pub fn untreated() -> Self {
        Self {
            eta1: 0.0,
            eta_r: 0.0,
            c: 0.5,
        }
    }

    pub fn eta1(&self) -> f64 {
        self.eta1
    }
    pub fn eta_r(&self) -> f64 {
        self.eta_r
    }
    pub fn c(&self) -> f64 {
        self.c
    }

    /// Fraction of new virions rendered noninfectious, `(eta_r + eta1) / 2`.
    pub fn noninfectious_fraction(&self) -> f64 {
        0.5 * (self.eta_r + self.eta1)
    }

    /// Residual infectivity factor `1 - c eta1`.
    pub fn infection_factor(&self) -> f64 {
        1.0 - self.c * self.eta1
    }

    /// `1 - eta = (1 - c eta1)(1 - (eta_r + eta1)/2)`.
    pub fn combined(&self) -> f64 {
        1.0 - self.infection_factor() * (1.0 - self.noninfectious_fraction())
    }
}

/// Combined drug efficacy `eta`.
pub fn combined_efficacy(eff: &TherapyEfficacies) -> f64 {
    eff.combined()
}

/// Instantaneous `(T, I, V_I, V_NI)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawState", into = "RawState")]
pub struct SystemState {
    t_cells: f64,
    i_cells: f64,
    v_i: f64,
    v_ni: f64,
}

#[derive(Serialize, Deserialize)]
struct RawState {
    t_cells: f64,
    i_cells: f64,
    v_i: f64,
    v_ni: f64,
}

impl TryFrom<RawState> for SystemState {
    type Error = Error;
    fn try_from(s: RawState) -> Result<Self> {
        SystemState::new(s.t_cells, s.i_cells, s.v_i, s.v_ni)
    }
}

impl From<SystemState> for RawState {
    fn from(s: SystemState) -> Self {
        RawState {
            t_cells: s.t_cells,
            i_cells: s.i_cells,
            v_i: s.v_i,
            v_ni: s.v_ni,
        }
    }
}

const STATE_NAMES: [&str; N_STATE] = ["t_cells", "i_cells", "v_i", "v_ni"];

impl SystemState {
    pub fn new(t_cells: f64, i_cells: f64, v_i: f64, v_ni: f64) -> Result<Self> {
        Self::from_array([t_cells, i_cells, v_i, v_ni])
    }

    /// Rejects non-finite and negative components.
    pub fn from_array(x: StateVec) -> Result<Self> {
        for (name, &v) in STATE_NAMES.iter().zip(x.iter()) {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::InvalidState { name, value: v });
            }
        }
        Ok(Self {
            t_cells: x[0],
            i_cells: x[1],
            v_i: x[2],
            v_ni: x[3],
        })
    }

    /// Internal constructor for values that are non-negative by construction.
    pub(crate) fn from_array_unchecked(x: StateVec) -> Self {
        debug_assert!(x.iter().all(|v| v.is_finite() && *v >= 0.0));
        Self {
            t_cells: x[0],
            i_cells: x[1],
            v_i: x[2],
            v_ni: x[3],
        }
    }

    pub fn t_cells(&self) -> f64 {
        self.t_cells
    }
    pub fn i_cells(&self) -> f64 {
        self.i_cells
    }
    pub fn v_i(&self) -> f64 {
        self.v_i
    }
    pub fn v_ni(&self) -> f64 {
        self.v_ni
    }

    /// Total viral load `V_I + V_NI`.
    pub fn viral_load(&self) -> f64 {
        self.v_i + self.v_ni
    }

    pub fn to_array(&self) -> StateVec {
        [self.t_cells, self.i_cells, self.v_i, self.v_ni]
    }
}

/// Right-hand side on raw vectors; `delayed` only enters the infection flux.
pub fn rhs(current: &StateVec, delayed: &StateVec, p: &ModelParams, eff: &TherapyEfficacies) -> StateVec {
    let [t, i, v, _] = *current;
    let k = eff.infection_factor();
    let nf = eff.noninfectious_fraction();
    let infection_now = k * p.alpha * v * t;
    let infection_delayed = k * p.alpha * delayed[2] * delayed[0];
    [
        p.s + p.r * t * (1.0 - (t + i) / p.t_max) - p.d1 * t - infection_now,
        infection_delayed - p.d2 * i,
        (1.0 - nf) * p.beta * i - p.d3 * v,
        nf * p.beta * i - p.d3 * current[3],
    ]
}

/// Time derivative of the state (per day).
pub fn vector_field(
    current: &SystemState,
    delayed: &SystemState,
    p: &ModelParams,
    eff: &TherapyEfficacies,
) -> StateVec {
    rhs(&current.to_array(), &delayed.to_array(), p, eff)
}

/// Disease-free hepatocyte level `T_hat`, root of
/// `s + r T (1 - T/t_max) - d1 T = 0`.
pub fn uninfected_equilibrium(p: &ModelParams) -> f64 {
    let rd = p.r - p.d1;
    let disc = rd * rd + 4.0 * p.r * p.s / p.t_max;
    let mut t_hat = p.t_max / (2.0 * p.r) * (rd + disc.sqrt());
    // One Newton step on the quadratic.
    let g = p.s + p.r * t_hat * (1.0 - t_hat / p.t_max) - p.d1 * t_hat;
    let dg = rd - 2.0 * p.r * t_hat / p.t_max;
    if dg != 0.0 {
        let refined = t_hat - g / dg;
        if refined.is_finite() && refined > 0.0 {
            t_hat = refined;
        }
    }
    t_hat
}

/// `R0 = T_hat alpha beta (1 - eta) / (d2 d3)`.
pub fn basic_r0(p: &ModelParams, eff: &TherapyEfficacies) -> f64 {
    uninfected_equilibrium(p) * p.alpha * p.beta * (1.0 - eff.combined()) / (p.d2 * p.d3)
}

/// Efficacy threshold `eta_c = 1 - T0* / T_hat`. Non-positive when the
/// untreated infection cannot persist (see [`critical_efficacy_is_meaningful`]).
pub fn critical_efficacy(p: &ModelParams) -> f64 {
    1.0 - p.untreated_target_level() / uninfected_equilibrium(p)
}

/// Whether the untreated `R0` exceeds one, i.e. `eta_c` lies in `(0, 1)`.
pub fn critical_efficacy_is_meaningful(p: &ModelParams) -> bool {
    critical_efficacy(p) > 0.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EquilibriumKind {
    Uninfected,
    Endemic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Equilibrium {
    pub kind: EquilibriumKind,
    pub state: SystemState,
    pub r0: f64,
}

/// The disease-free point `(T_hat, 0, 0, 0)`.
pub fn uninfected_point(p: &ModelParams, eff: &TherapyEfficacies) -> Equilibrium {
    Equilibrium {
        kind: EquilibriumKind::Uninfected,
        state: SystemState::from_array_unchecked([uninfected_equilibrium(p), 0.0, 0.0, 0.0]),
        r0: basic_r0(p, eff),
    }
}

/// Endemic point `E2`, present only when `R0 > 1`.
///
/// Closed forms are evaluated first and then polished with Newton's method on
/// the steady-state equations.
pub fn endemic_equilibrium(p: &ModelParams, eff: &TherapyEfficacies) -> Option<Equilibrium> {
    let r0 = basic_r0(p, eff);
    if r0.is_nan() || r0 <= 1.0 {
        return None;
    }
    let t_hat = uninfected_equilibrium(p);
    let nf = eff.noninfectious_fraction();
    let t_star = p.d2 * p.d3 / (eff.infection_factor() * (1.0 - nf) * p.alpha * p.beta);
    let i_star = (p.s * r0 * p.t_max + p.r * t_hat * t_hat) / (p.r * t_hat + p.d2 * r0 * p.t_max)
        * (1.0 - 1.0 / r0);
    let mut x = [
        t_star,
        i_star,
        (1.0 - nf) * p.beta * i_star / p.d3,
        nf * p.beta * i_star / p.d3,
    ];
    newton_polish(&mut x, p, eff);
    // V_NI vanishes exactly when no drug is given.
    let positive = |v: &f64| v.is_finite() && *v > 0.0;
    if !x[..3].iter().all(positive) || !(x[3].is_finite() && x[3] >= 0.0) {
        return None;
    }
    Some(Equilibrium {
        kind: EquilibriumKind::Endemic,
        state: SystemState::from_array_unchecked(x),
        r0,
    })
}

fn residual_norm(x: &StateVec, p: &ModelParams, eff: &TherapyEfficacies) -> f64 {
    let f = rhs(x, x, p, eff);
    // Scale each equation by its largest gross term.
    let k = eff.infection_factor();
    let flux = k * p.alpha * x[2] * x[0];
    let scales = [
        p.s.max(p.r * x[0]).max(flux),
        flux.max(p.d2 * x[1]),
        p.beta * x[1],
        p.beta * x[1],
    ];
    f.iter()
        .zip(scales.iter())
        .map(|(fi, si)| if *si > 0.0 { (fi / si).abs() } else { fi.abs() })
        .fold(0.0, f64::max)
}

fn newton_polish(x: &mut StateVec, p: &ModelParams, eff: &TherapyEfficacies) {
    for _ in 0..4 {
        let before = residual_norm(x, p, eff);
        if before < 1e-14 {
            return;
        }
        let f = rhs(x, x, p, eff);
        let (j_now, j_del) = crate::stability::jacobians(x, p, eff);
        let mut jac = nalgebra::Matrix4::<f64>::zeros();
        for r in 0..N_STATE {
            for c in 0..N_STATE {
                jac[(r, c)] = j_now[r][c] + j_del[r][c];
            }
        }
        let rhs_v = nalgebra::Vector4::new(-f[0], -f[1], -f[2], -f[3]);
        let Some(step) = jac.lu().solve(&rhs_v) else {
            return;
        };
        let trial = [x[0] + step[0], x[1] + step[1], x[2] + step[2], x[3] + step[3]];
        if residual_norm(&trial, p, eff) < before {
            *x = trial;
        } else {
            return;
        }
    }
}
