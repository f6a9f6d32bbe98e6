//! Fixed-step integration of the delay system by the method of steps.
//!
//! Classical RK4 advances the state; the delayed argument is read from the
//! already computed part of the trajectory through cubic Hermite
//! interpolation on stored states and derivatives. When `tau > 0` the step is
//! shrunk to `tau / n` with `n = ceil(tau / dt)`, so every multiple of `tau`
//! (where the solution's derivatives jump) falls on a grid node and the
//! delayed lookups at `t - tau` and `t - tau + dt` hit nodes exactly.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    endemic_equilibrium, rhs, uninfected_point, ModelParams, StateVec, SystemState,
    TherapyEfficacies, N_STATE,
};
use crate::stability::{char_coefficients, omega_analysis};

/// Components above this magnitude abort the run.
pub const BLOW_UP_LIMIT: f64 = 1e15;
/// Negative excursions smaller than this fraction of a component's running
/// scale are treated as roundoff and clamped to zero.
pub const CLAMP_TOLERANCE: f64 = 1e-12;
/// Minimum number of steps per delay interval.
pub const MIN_STEPS_PER_DELAY: usize = 16;

/// Constant initial function on `[-tau, 0]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistorySpec {
    pub values: SystemState,
}

impl HistorySpec {
    pub fn constant(values: SystemState) -> Self {
        Self { values }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegrationConfig {
    /// Requested step (days). With a positive delay the step actually used
    /// is `tau / ceil(tau / dt)`.
    pub dt: f64,
    /// Horizon (days).
    pub t_end: f64,
    /// Keep node derivatives so that [`interpolate`] is cubic Hermite.
    /// Without them interpolation falls back to piecewise linear.
    pub dense_output: bool,
}

impl IntegrationConfig {
    pub fn new(dt: f64, t_end: f64) -> Self {
        Self {
            dt,
            t_end,
            dense_output: true,
        }
    }

    /// Step that will actually be used for a given delay.
    pub fn effective_dt(&self, tau: f64) -> Result<f64> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dt",
                value: self.dt,
                reason: "must be finite and positive",
            });
        }
        if !(self.t_end.is_finite() && self.t_end >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "t_end",
                value: self.t_end,
                reason: "must be finite and non-negative",
            });
        }
        if !(tau.is_finite() && tau >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "tau",
                value: tau,
                reason: "must be finite and non-negative",
            });
        }
        if tau == 0.0 {
            return Ok(self.dt);
        }
        let limit = tau / MIN_STEPS_PER_DELAY as f64;
        if self.dt > limit * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge {
                dt: self.dt,
                limit,
            });
        }
        let n = (tau / self.dt * (1.0 - 1e-12)).ceil().max(MIN_STEPS_PER_DELAY as f64);
        Ok(tau / n)
    }
}

/// Integration output on the (aligned) grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<SystemState>,
    /// Right derivatives at each node; empty without dense output.
    pub derivs: Vec<StateVec>,
    pub tau: f64,
    pub dt_used: f64,
    /// Number of negative roundoff values set to zero.
    pub clamped: usize,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_state(&self) -> &SystemState {
        self.states.last().expect("trajectory has at least one node")
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().expect("trajectory has at least one node")
    }
}

fn hermite(x0: &StateVec, d0: &StateVec, x1: &StateVec, d1: &StateVec, h: f64, s: f64) -> StateVec {
    let s2 = s * s;
    let s3 = s2 * s;
    let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
    let h10 = s3 - 2.0 * s2 + s;
    let h01 = -2.0 * s3 + 3.0 * s2;
    let h11 = s3 - s2;
    std::array::from_fn(|k| h00 * x0[k] + h10 * h * d0[k] + h01 * x1[k] + h11 * h * d1[k])
}

fn axpy(x: &StateVec, a: f64, k: &StateVec) -> StateVec {
    std::array::from_fn(|i| x[i] + a * k[i])
}

pub fn integrate(
    p: &ModelParams,
    eff: &TherapyEfficacies,
    tau: f64,
    h: &HistorySpec,
    cfg: &IntegrationConfig,
) -> Result<Trajectory> {
    let dt = cfg.effective_dt(tau)?;
    let lag = if tau > 0.0 {
        (tau / dt).round() as usize
    } else {
        0
    };
    let hist = h.values.to_array();
    let n_full = (cfg.t_end / dt * (1.0 - 1e-12)).floor() as usize;
    let capacity = n_full + 2;

    let mut times = Vec::with_capacity(capacity);
    let mut xs: Vec<StateVec> = Vec::with_capacity(capacity);
    let mut ds: Vec<StateVec> = Vec::with_capacity(capacity);
    let mut scale = hist.map(|v| v.abs().max(f64::MIN_POSITIVE));
    let mut clamped = 0usize;

    let delayed_at_node = |xs: &Vec<StateVec>, i: usize| -> StateVec {
        if i < lag {
            hist
        } else {
            xs[i - lag]
        }
    };

    times.push(0.0);
    xs.push(hist);
    ds.push(rhs(&hist, &hist, p, eff));

    let mut step = |i: usize, hstep: f64, xs: &mut Vec<StateVec>, ds: &mut Vec<StateVec>, t: f64| -> Result<()> {
        let x = xs[i];
        let (k1, k2, k3, k4);
        if lag == 0 {
            k1 = ds[i];
            let y2 = axpy(&x, 0.5 * hstep, &k1);
            k2 = rhs(&y2, &y2, p, eff);
            let y3 = axpy(&x, 0.5 * hstep, &k2);
            k3 = rhs(&y3, &y3, p, eff);
            let y4 = axpy(&x, hstep, &k3);
            k4 = rhs(&y4, &y4, p, eff);
        } else {
            // Delayed lookups on the node interval [i - lag, i - lag + 1].
            let (mid, end) = if i < lag {
                (hist, hist)
            } else {
                let j = i - lag;
                let (x0, d0, x1, d1) = (&xs[j], &ds[j], &xs[j + 1], &ds[j + 1]);
                let s = hstep / dt;
                let end = if s == 1.0 {
                    *x1
                } else {
                    hermite(x0, d0, x1, d1, dt, s)
                };
                (hermite(x0, d0, x1, d1, dt, 0.5 * s), end)
            };
            let start = delayed_at_node(xs, i);
            k1 = ds[i];
            debug_assert_eq!(k1, rhs(&x, &start, p, eff));
            k2 = rhs(&axpy(&x, 0.5 * hstep, &k1), &mid, p, eff);
            k3 = rhs(&axpy(&x, 0.5 * hstep, &k2), &mid, p, eff);
            k4 = rhs(&axpy(&x, hstep, &k3), &end, p, eff);
        }
        let mut next: StateVec =
            std::array::from_fn(|c| x[c] + hstep / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c]));
        let t_next = t + hstep;
        for (c, v) in next.iter_mut().enumerate() {
            if !v.is_finite() || v.abs() > BLOW_UP_LIMIT {
                return Err(Error::BlowUp {
                    t: t_next,
                    component: c,
                    value: *v,
                });
            }
            if *v < 0.0 {
                if -*v <= CLAMP_TOLERANCE * scale[c] {
                    *v = 0.0;
                    clamped += 1;
                } else {
                    return Err(Error::NegativeState {
                        t: t_next,
                        component: c,
                        value: *v,
                    });
                }
            }
            scale[c] = scale[c].max(v.abs());
        }
        xs.push(next);
        let dnext = if lag == 0 {
            rhs(&next, &next, p, eff)
        } else {
            let delayed = if i + 1 < lag { hist } else { xs[i + 1 - lag] };
            rhs(&next, &delayed, p, eff)
        };
        ds.push(dnext);
        Ok(())
    };

    for i in 0..n_full {
        let t = i as f64 * dt;
        step(i, dt, &mut xs, &mut ds, t)?;
        times.push((i + 1) as f64 * dt);
    }
    let t_last = n_full as f64 * dt;
    let rest = cfg.t_end - t_last;
    if rest > 1e-12 * dt.max(cfg.t_end) {
        step(n_full, rest, &mut xs, &mut ds, t_last)?;
        times.push(cfg.t_end);
    } else if n_full > 0 {
        *times.last_mut().unwrap() = cfg.t_end;
    }

    let states = xs.into_iter().map(SystemState::from_array_unchecked).collect();
    Ok(Trajectory {
        times,
        states,
        derivs: if cfg.dense_output { ds } else { Vec::new() },
        tau,
        dt_used: dt,
        clamped,
    })
}

/// State at time `t`, cubic Hermite between the bracketing nodes.
pub fn interpolate(traj: &Trajectory, t: f64) -> Result<SystemState> {
    let start = traj.times[0];
    let end = traj.t_end();
    if !(t >= start && t <= end) {
        return Err(Error::OutOfRange { t, start, end });
    }
    let idx = traj.times.partition_point(|&x| x <= t);
    if idx == 0 || traj.times[idx - 1] == t {
        return Ok(traj.states[idx.saturating_sub(1)]);
    }
    let j = idx - 1;
    let (t0, t1) = (traj.times[j], traj.times[j + 1]);
    let h = t1 - t0;
    let s = (t - t0) / h;
    let x0 = traj.states[j].to_array();
    let x1 = traj.states[j + 1].to_array();
    let out = if traj.derivs.len() == traj.times.len() {
        hermite(&x0, &traj.derivs[j], &x1, &traj.derivs[j + 1], h, s)
    } else {
        std::array::from_fn(|k| x0[k] + s * (x1[k] - x0[k]))
    };
    // Hermite overshoot can dip a vanishing component just below zero.
    Ok(SystemState::from_array_unchecked(out.map(|v| v.max(0.0))))
}

/// Detection limit of the viral-load assay (copies/ml).
pub const DEFAULT_SVR_THRESHOLD: f64 = 100.0;

/// First time the total viral load falls below `threshold` and stays below
/// through the end of the trajectory, located to `dt/10` by bisection on the
/// interpolant.
pub fn svr_time(traj: &Trajectory, threshold: f64) -> Option<f64> {
    let loads: Vec<f64> = traj.states.iter().map(|s| s.viral_load()).collect();
    let last_above = loads.iter().rposition(|&v| v >= threshold);
    let Some(k) = last_above else {
        return Some(traj.times[0]);
    };
    if k + 1 >= loads.len() {
        return None;
    }
    let (mut lo, mut hi) = (traj.times[k], traj.times[k + 1]);
    let target = (hi - lo) / 10.0;
    while hi - lo > target {
        let mid = 0.5 * (lo + hi);
        let v = interpolate(traj, mid).map(|s| s.viral_load()).unwrap_or(threshold);
        if v >= threshold {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LongRun {
    #[serde(rename = "to_E1")]
    ToE1,
    #[serde(rename = "to_E2")]
    ToE2,
    Oscillatory,
    Undetermined,
}

/// Window statistics used by [`classify_longrun`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowStats {
    pub start: f64,
    pub mean: StateVec,
    pub min: StateVec,
    pub max: StateVec,
    /// Successive local maxima of the total viral load in the window.
    pub peaks: Vec<(f64, f64)>,
}

pub fn window_stats(traj: &Trajectory, window: f64) -> WindowStats {
    let end = traj.t_end();
    let start = (end - window).max(traj.times[0]);
    let first = traj.times.partition_point(|&t| t < start);
    let slice = &traj.states[first..];
    let n = slice.len().max(1) as f64;
    let mut mean = [0.0; N_STATE];
    let mut min = [f64::INFINITY; N_STATE];
    let mut max = [f64::NEG_INFINITY; N_STATE];
    for s in slice {
        let x = s.to_array();
        for k in 0..N_STATE {
            mean[k] += x[k] / n;
            min[k] = min[k].min(x[k]);
            max[k] = max[k].max(x[k]);
        }
    }
    let mut peaks = Vec::new();
    for j in (first + 1)..traj.len().saturating_sub(1) {
        let v = traj.states[j].viral_load();
        if v > traj.states[j - 1].viral_load() && v >= traj.states[j + 1].viral_load() {
            peaks.push((traj.times[j], v));
        }
    }
    WindowStats {
        start,
        mean,
        min,
        max,
        peaks,
    }
}

/// Classifies the late behavior of a run.
///
/// The window covers three periods `2 pi / omega0` when the endemic point has
/// a crossing frequency, and the last fifth of the run otherwise (whichever
/// is longer). Component scales are the larger of the equilibrium value and
/// the largest value seen along the trajectory.
pub fn classify_longrun(
    traj: &Trajectory,
    p: &ModelParams,
    eff: &TherapyEfficacies,
    tol: f64,
) -> LongRun {
    let span = traj.t_end() - traj.times[0];
    if span <= 0.0 {
        return classify_constant(traj, p, eff, tol);
    }
    let period = char_coefficients(p, eff)
        .ok()
        .and_then(|cc| omega_analysis(&cc).omega0)
        .map(|w| 2.0 * std::f64::consts::PI / w);
    let window = period.map_or(0.2 * span, |t| (3.0 * t).max(0.2 * span)).min(span);
    let stats = window_stats(traj, window);

    let mut peak_scale = [0.0f64; N_STATE];
    for s in &traj.states {
        for (k, v) in s.to_array().iter().enumerate() {
            peak_scale[k] = peak_scale[k].max(v.abs());
        }
    }
    let near = |target: &StateVec| -> bool {
        (0..N_STATE).all(|k| {
            let scale = peak_scale[k].max(target[k].abs()).max(f64::MIN_POSITIVE);
            (stats.mean[k] - target[k]).abs() <= tol * scale
                && stats.max[k] - stats.min[k] <= tol * scale
        })
    };
    let e1 = uninfected_point(p, eff).state.to_array();
    if near(&e1) {
        return LongRun::ToE1;
    }
    if let Some(e2) = endemic_equilibrium(p, eff) {
        if near(&e2.state.to_array()) {
            return LongRun::ToE2;
        }
    }

    let v_scale = peak_scale[2] + peak_scale[3];
    let mean_v = stats.mean[2] + stats.mean[3];
    let amps: Vec<f64> = stats.peaks.iter().map(|(_, v)| v - mean_v).collect();
    if amps.len() >= 3 {
        let tail = &amps[amps.len() - 3..];
        let steady = tail.windows(2).all(|w| (w[1] - w[0]).abs() < 0.1 * w[0].abs().max(w[1].abs()));
        if steady && tail.iter().all(|a| *a > tol * v_scale) {
            return LongRun::Oscillatory;
        }
    }
    LongRun::Undetermined
}

fn classify_constant(
    traj: &Trajectory,
    p: &ModelParams,
    eff: &TherapyEfficacies,
    tol: f64,
) -> LongRun {
    let x = traj.final_state().to_array();
    let close = |e: &StateVec| {
        (0..N_STATE).all(|k| (x[k] - e[k]).abs() <= tol * x[k].abs().max(e[k].abs()).max(f64::MIN_POSITIVE))
    };
    // A single node carries no information about convergence unless it sits
    // on an equilibrium.
    if close(&uninfected_point(p, eff).state.to_array()) {
        LongRun::ToE1
    } else if endemic_equilibrium(p, eff).is_some_and(|e| close(&e.state.to_array())) {
        LongRun::ToE2
    } else {
        LongRun::Undetermined
    }
}
