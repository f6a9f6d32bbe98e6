//! Small dense kernels: complex Gaussian elimination with partial pivoting
//! and real-coefficient cubic roots via the companion matrix.

use nalgebra::Matrix3;
use num_complex::Complex64;

use crate::error::{Error, Result};

/// Result of a dense complex solve.
#[derive(Debug, Clone, PartialEq)]
pub struct Solution<const N: usize> {
    pub x: [Complex64; N],
    /// 1-norm condition number, `||M||_1 ||M^-1||_1`.
    pub condition: f64,
    /// `||M x - b||_inf / (||M||_inf ||x||_inf + ||b||_inf)`.
    pub relative_residual: f64,
}

fn norm1<const N: usize>(m: &[[Complex64; N]; N]) -> f64 {
    (0..N)
        .map(|c| (0..N).map(|r| m[r][c].norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn norm_inf_mat<const N: usize>(m: &[[Complex64; N]; N]) -> f64 {
    m.iter()
        .map(|row| row.iter().map(|v| v.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

fn norm_inf_vec(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn mat_vec<const N: usize>(m: &[[Complex64; N]; N], x: &[Complex64; N]) -> [Complex64; N] {
    let mut y = [Complex64::new(0.0, 0.0); N];
    for (yi, row) in y.iter_mut().zip(m.iter()) {
        *yi = row.iter().zip(x.iter()).map(|(a, b)| a * b).sum();
    }
    y
}

/// LU factors with row permutation, stored in place.
struct Lu<const N: usize> {
    lu: [[Complex64; N]; N],
    perm: [usize; N],
}

#[allow(clippy::needless_range_loop)]
impl<const N: usize> Lu<N> {
    fn factor(m: &[[Complex64; N]; N], pivot_tol: f64) -> Result<Self> {
        let mut lu = *m;
        let mut perm = [0usize; N];
        for (i, p) in perm.iter_mut().enumerate() {
            *p = i;
        }
        let scale = norm_inf_mat(m).max(f64::MIN_POSITIVE);
        for k in 0..N {
            let (piv_row, piv_abs) = (k..N)
                .map(|r| (r, lu[r][k].norm()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if piv_abs <= pivot_tol * scale {
                return Err(Error::Singular {
                    size: N,
                    pivot: piv_abs / scale,
                });
            }
            if piv_row != k {
                lu.swap(piv_row, k);
                perm.swap(piv_row, k);
            }
            let pivot = lu[k][k];
            for r in (k + 1)..N {
                let factor = lu[r][k] / pivot;
                lu[r][k] = factor;
                for c in (k + 1)..N {
                    let sub = factor * lu[k][c];
                    lu[r][c] -= sub;
                }
            }
        }
        Ok(Self { lu, perm })
    }

    fn solve(&self, b: &[Complex64; N]) -> [Complex64; N] {
        let mut y = [Complex64::new(0.0, 0.0); N];
        for i in 0..N {
            let mut acc = b[self.perm[i]];
            for j in 0..i {
                acc -= self.lu[i][j] * y[j];
            }
            y[i] = acc;
        }
        for i in (0..N).rev() {
            let mut acc = y[i];
            for j in (i + 1)..N {
                acc -= self.lu[i][j] * y[j];
            }
            y[i] = acc / self.lu[i][i];
        }
        y
    }
}

/// Solves `M x = b` by partial-pivoted elimination.
///
/// Fails with [`Error::Singular`] when a pivot falls below `1e-12` of the
/// matrix scale or the condition number exceeds `1e12`.
pub fn solve<const N: usize>(m: &[[Complex64; N]; N], b: &[Complex64; N]) -> Result<Solution<N>> {
    let lu = Lu::factor(m, 1e-12)?;
    let x = lu.solve(b);

    let mut inv_norm = 0.0f64;
    for c in 0..N {
        let mut e = [Complex64::new(0.0, 0.0); N];
        e[c] = Complex64::new(1.0, 0.0);
        let col = lu.solve(&e);
        inv_norm = inv_norm.max(col.iter().map(|z| z.norm()).sum());
    }
    let condition = norm1(m) * inv_norm;
    if !(condition.is_finite() && condition < 1e12) {
        return Err(Error::Singular {
            size: N,
            pivot: 1.0 / condition,
        });
    }

    let mx = mat_vec(m, &x);
    let res: Vec<Complex64> = mx.iter().zip(b.iter()).map(|(a, b)| a - b).collect();
    let denom = norm_inf_mat(m) * norm_inf_vec(&x) + norm_inf_vec(b);
    let relative_residual = if denom > 0.0 {
        norm_inf_vec(&res) / denom
    } else {
        0.0
    };
    Ok(Solution {
        x,
        condition,
        relative_residual,
    })
}

/// Complex roots of the monic cubic `x^3 + c2 x^2 + c1 x + c0`, from the
/// eigenvalues of its companion matrix, each refined by Newton steps.
pub fn monic_cubic_roots(c2: f64, c1: f64, c0: f64) -> [Complex64; 3] {
    #[rustfmt::skip]
    let companion = Matrix3::new(
        -c2, -c1, -c0,
        1.0, 0.0, 0.0,
        0.0, 1.0, 0.0,
    );
    let eig = companion.complex_eigenvalues();
    let mut roots = [eig[0], eig[1], eig[2]];
    for z in roots.iter_mut() {
        *z = newton_cubic(*z, c2, c1, c0);
    }
    roots
}

fn newton_cubic(mut z: Complex64, c2: f64, c1: f64, c0: f64) -> Complex64 {
    for _ in 0..3 {
        let p = ((z + c2) * z + c1) * z + c0;
        let dp = (3.0 * z + 2.0 * c2) * z + c1;
        if dp.norm() == 0.0 {
            break;
        }
        let next = z - p / dp;
        let p_next = ((next + c2) * next + c1) * next + c0;
        if p_next.norm() < p.norm() {
            z = next;
        } else {
            break;
        }
    }
    z
}
