//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls the library's linearization code.

#![allow(dead_code)]

use hcv_core::model::{rhs, ModelParams, StateVec, TherapyEfficacies};
use hcv_core::stability::CharCoefficients;
use rand::{Rng, SeedableRng};
use rand::rngs::StdRng;

pub type Mat4 = [[f64; 4]; 4];

/// Central-difference Jacobians of the vector field with respect to the
/// current and the delayed state.
pub fn fd_jacobians(x: &StateVec, p: &ModelParams, eff: &TherapyEfficacies) -> (Mat4, Mat4) {
    let mut now = [[0.0; 4]; 4];
    let mut del = [[0.0; 4]; 4];
    for c in 0..4 {
        let h = 1e-4 * x[c].abs().max(1.0);
        let mut up = *x;
        let mut dn = *x;
        up[c] += h;
        dn[c] -= h;
        let fn_up = rhs(&up, x, p, eff);
        let fn_dn = rhs(&dn, x, p, eff);
        let fd_up = rhs(x, &up, p, eff);
        let fd_dn = rhs(x, &dn, p, eff);
        for r in 0..4 {
            now[r][c] = (fn_up[r] - fn_dn[r]) / (2.0 * h);
            del[r][c] = (fd_up[r] - fd_dn[r]) / (2.0 * h);
        }
    }
    (now, del)
}

/// Polynomial in `lambda` and `E = e^{-lambda tau}`; `c[i][j]` multiplies
/// `lambda^i E^j`.
#[derive(Clone, Copy, Debug)]
pub struct Bipoly {
    pub c: [[f64; 5]; 5],
}

impl Bipoly {
    fn zero() -> Self {
        Self { c: [[0.0; 5]; 5] }
    }

    fn mul(&self, o: &Self) -> Self {
        let mut out = Self::zero();
        for i in 0..5 {
            for j in 0..5 {
                if self.c[i][j] == 0.0 {
                    continue;
                }
                for k in 0..5 - i {
                    for l in 0..5 - j {
                        out.c[i + k][j + l] += self.c[i][j] * o.c[k][l];
                    }
                }
            }
        }
        out
    }
}

/// `det(lambda I - J_now - J_del E)` expanded over all 24 permutations.
pub fn characteristic_bipoly(now: &Mat4, del: &Mat4) -> Bipoly {
    let entry = |r: usize, c: usize| {
        let mut e = Bipoly::zero();
        if r == c {
            e.c[1][0] = 1.0;
        }
        e.c[0][0] = -now[r][c];
        e.c[0][1] = -del[r][c];
        e
    };
    let mut total = Bipoly::zero();
    let mut perm = [0usize, 1, 2, 3];
    permute(&mut perm, 0, &mut |p: &[usize; 4]| {
        let inversions = (0..4)
            .flat_map(|i| (i + 1..4).map(move |j| (i, j)))
            .filter(|&(i, j)| p[i] > p[j])
            .count();
        let sign = if inversions % 2 == 0 { 1.0 } else { -1.0 };
        let mut term = entry(0, p[0]);
        for (r, &col) in p.iter().enumerate().skip(1) {
            term = term.mul(&entry(r, col));
        }
        for i in 0..5 {
            for j in 0..5 {
                total.c[i][j] += sign * term.c[i][j];
            }
        }
    });
    total
}

fn permute(p: &mut [usize; 4], k: usize, f: &mut dyn FnMut(&[usize; 4])) {
    if k == 4 {
        f(p);
        return;
    }
    for i in k..4 {
        p.swap(k, i);
        permute(p, k + 1, f);
        p.swap(k, i);
    }
}

/// Divides `sum p_i lambda^i` by `(lambda + d)`; returns quotient
/// coefficients (ascending) and the remainder.
pub fn divide_linear(p: &[f64], d: f64) -> (Vec<f64>, f64) {
    let n = p.len();
    let mut q = vec![0.0; n - 1];
    let mut acc = 0.0;
    for i in (1..n).rev() {
        acc = p[i] + (-d) * acc;
        q[i - 1] = acc;
    }
    let rem = p[0] + (-d) * acc;
    (q, rem)
}

/// Coefficients of the reduced characteristic equation recovered from the
/// determinant, after removing the `(lambda + d3)` factor.
pub fn oracle_coefficients(x: &StateVec, p: &ModelParams, eff: &TherapyEfficacies) -> ([f64; 5], f64) {
    let (now, del) = fd_jacobians(x, p, eff);
    let bp = characteristic_bipoly(&now, &del);
    let e0: Vec<f64> = (0..5).map(|i| bp.c[i][0]).collect();
    let e1: Vec<f64> = (0..5).map(|i| bp.c[i][1]).collect();
    let (q0, r0) = divide_linear(&e0, p.d3());
    let (q1, r1) = divide_linear(&e1, p.d3());
    let higher: f64 = (2..5).flat_map(|j| (0..5).map(move |i| (i, j))).map(|(i, j)| bp.c[i][j].abs()).sum();
    let lead = q0[3];
    let scale = e0.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let defect = (r0.abs() + r1.abs() + higher + (lead - 1.0).abs() * scale + q1[2].abs() + q1[3].abs()) / scale;
    ([q0[2], q0[1], q0[0], q1[1], q1[0]], defect)
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

pub fn max_coefficient_mismatch(cc: &CharCoefficients, oracle: &[f64; 5]) -> f64 {
    let ours = [cc.a0, cc.a1, cc.a2, cc.b1, cc.b2];
    ours.iter().zip(oracle).map(|(a, b)| rel_diff(*a, *b)).fold(0.0, f64::max)
}

/// Parameter sets drawn around the two presets with `R0 > 1`.
pub fn random_draws(seed: u64, n: usize) -> Vec<(ModelParams, TherapyEfficacies)> {
    let mut rng = StdRng::seed_from_u64(seed);
    let bases = [
        [1.0, 2.0, 3.6e7, 2.25e-7, 2.9, 0.01, 1.0, 6.0],
        [3.7e4, 0.73, 0.6e7, 1.8e-7, 13.9, 2.4e-3, 0.06, 13.9],
    ];
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let base = bases[rng.random_range(0..2)];
        let v: Vec<f64> = base.iter().map(|b| b * 2f64.powf(rng.random_range(-1.0..1.0))).collect();
        let Ok(p) = ModelParams::new(v[0], v[1], v[2], v[3], v[4], v[5], v[6], v[7]) else {
            continue;
        };
        let eff = TherapyEfficacies::new(
            rng.random_range(0.0..0.9),
            rng.random_range(0.0..0.9),
            rng.random_range(0.05..0.95),
        )
        .unwrap();
        if hcv_core::model::basic_r0(&p, &eff) > 1.05 {
            out.push((p, eff));
        }
    }
    out
}

/// Adaptive Dormand-Prince 5(4) for the delay-free system, written
/// independently of the library stepper.
pub fn dopri_reference(p: &ModelParams, eff: &TherapyEfficacies, x0: StateVec, t_end: f64, rtol: f64) -> StateVec {
    const A: [[f64; 6]; 7] = [
        [0.0; 6],
        [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
        [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
        [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
        [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
        [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
    ];
    const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
    const B4: [f64; 7] = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let f = |x: &StateVec| rhs(x, x, p, eff);
    let mut t = 0.0;
    let mut x = x0;
    let mut h = 1e-4;
    while t < t_end {
        if t + h > t_end {
            h = t_end - t;
        }
        let mut k = [[0.0; 4]; 7];
        for s in 0..7 {
            let mut y = x;
            for j in 0..s {
                for c in 0..4 {
                    y[c] += h * A[s][j] * k[j][c];
                }
            }
            k[s] = f(&y);
        }
        let mut x5 = x;
        let mut err = 0.0f64;
        for c in 0..4 {
            let mut d5 = 0.0;
            let mut d4 = 0.0;
            for s in 0..7 {
                d5 += B5[s] * k[s][c];
                d4 += B4[s] * k[s][c];
            }
            x5[c] += h * d5;
            let sc = rtol * x[c].abs().max(x5[c].abs()).max(1.0);
            err = err.max((h * (d5 - d4)).abs() / sc);
        }
        if err <= 1.0 {
            t += h;
            x = x5;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    x
}

pub fn rel_err(a: &StateVec, b: &StateVec) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}
