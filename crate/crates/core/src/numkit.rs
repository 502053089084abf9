//! Small dense linear algebra: symmetric matrices, a cyclic Jacobi
//! eigensolver, shifted power iteration and ordinary least-squares lines.
//!
//! Everything here targets desk-scale problems (d ≤ 64). Matrices are stored
//! row-major in a flat `Vec<f64>` and kept exactly symmetric by construction.

use serde::Serialize;

use crate::error::{check_dim, Error, Result};
use crate::stochastics::Rng;

/// Largest dimension accepted by [`sym_eig_all`].
pub const MAX_EXACT_DIM: usize = 64;

const MAX_JACOBI_SWEEPS: usize = 100;

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Euclidean distance `‖a − b‖`.
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// `y ← y + alpha·x`
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Dense symmetric matrix. `get(i, j) == get(j, i)` holds bit-for-bit.
#[derive(Clone, Debug, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidInput("matrix dimension must be >= 1".into()));
        }
        Ok(Self {
            dim,
            data: vec![0.0; dim * dim],
        })
    }

    pub fn identity(dim: usize) -> Result<Self> {
        let mut m = Self::zeros(dim)?;
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        Ok(m)
    }

    pub fn from_diag(diag: &[f64]) -> Result<Self> {
        let mut m = Self::zeros(diag.len())?;
        for (i, &v) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = v;
        }
        Ok(m)
    }

    /// Builds a matrix from the upper triangle of `f`; the lower triangle is
    /// mirrored, so `f` is only called with `i <= j`.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        let mut m = Self::zeros(dim)?;
        for i in 0..dim {
            for j in i..dim {
                m.set(i, j, f(i, j));
            }
        }
        Ok(m)
    }

    /// Square rows that must already be exactly symmetric.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        let mut m = Self::zeros(dim)?;
        for (i, row) in rows.iter().enumerate() {
            check_dim(dim, row.len())?;
            for (j, &v) in row.iter().enumerate() {
                if rows[j][i] != v {
                    return Err(Error::InvalidInput(format!(
                        "matrix is not symmetric at ({i}, {j})"
                    )));
                }
                m.data[i * dim + j] = v;
            }
        }
        Ok(m)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    /// Sets both `(i, j)` and `(j, i)`.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.dim + j] = v;
        self.data[j * self.dim + i] = v;
    }

    /// Row-major entries.
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.dim).map(<[f64]>::to_vec).collect()
    }

    /// `self ← self + alpha·x·xᵀ`, updating the upper triangle and mirroring.
    pub fn add_outer(&mut self, alpha: f64, x: &[f64]) {
        let d = self.dim;
        for (i, xi) in x.iter().enumerate() {
            let ai = alpha * xi;
            for (entry, xj) in self.data[i * d + i..(i + 1) * d].iter_mut().zip(&x[i..]) {
                *entry += ai * xj;
            }
        }
        self.mirror_upper();
    }

    pub(crate) fn mirror_upper(&mut self) {
        let d = self.dim;
        for i in 0..d {
            for j in 0..i {
                self.data[i * d + j] = self.data[j * d + i];
            }
        }
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }

    pub fn add_diag(&mut self, c: f64) {
        for i in 0..self.dim {
            self.data[i * self.dim + i] += c;
        }
    }

    pub fn matvec(&self, x: &[f64], out: &mut [f64]) {
        for (row, o) in self.data.chunks(self.dim).zip(out.iter_mut()) {
            *o = dot(row, x);
        }
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Max absolute row sum. Bounds the spectral radius (Gershgorin).
    pub fn inf_norm(&self) -> f64 {
        self.data
            .chunks(self.dim)
            .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigenPair {
    pub value: f64,
    pub vector: Vec<f64>,
}

/// Full eigendecomposition by cyclic Jacobi rotations.
///
/// Eigenpairs come back sorted by descending eigenvalue with orthonormal
/// eigenvectors.
pub fn sym_eig_all(a: &SymMatrix) -> Result<Vec<EigenPair>> {
    let n = a.dim();
    if n > MAX_EXACT_DIM {
        return Err(Error::InvalidInput(format!(
            "exact eigensolver supports dim <= {MAX_EXACT_DIM}, got {n}"
        )));
    }
    let mut m = a.as_slice().to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let frob = a.frobenius();
    let target = 4.0 * f64::EPSILON * frob;

    let mut converged = false;
    for _sweep in 0..MAX_JACOBI_SWEEPS {
        let off = off_diagonal_norm(&m, n);
        if off <= target {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // A ← A·P
                for k in 0..n {
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    m[k * n + p] = c * akp - s * akq;
                    m[k * n + q] = s * akp + c * akq;
                }
                // A ← Pᵀ·A
                for k in 0..n {
                    let apk = m[p * n + k];
                    let aqk = m[q * n + k];
                    m[p * n + k] = c * apk - s * aqk;
                    m[q * n + k] = s * apk + c * aqk;
                }
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    if !converged && off_diagonal_norm(&m, n) > target {
        return Err(Error::NonConvergence {
            algorithm: "jacobi",
            iterations: MAX_JACOBI_SWEEPS,
        });
    }

    let mut pairs: Vec<EigenPair> = (0..n)
        .map(|j| EigenPair {
            value: m[j * n + j],
            vector: (0..n).map(|k| v[k * n + j]).collect(),
        })
        .collect();
    pairs.sort_by(|x, y| y.value.total_cmp(&x.value));
    Ok(pairs)
}

fn off_diagonal_norm(m: &[f64], n: usize) -> f64 {
    let mut s = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += 2.0 * m[i * n + j] * m[i * n + j];
        }
    }
    s.sqrt()
}

/// Largest algebraic eigenvalue through the exact solver.
pub fn lambda_max_exact(a: &SymMatrix) -> Result<f64> {
    Ok(sym_eig_all(a)?[0].value)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EigResult {
    pub value: f64,
    pub vector: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Iteration cap used when the caller has no preference:
/// `10·dim·⌈ln(1/tol)⌉`.
pub fn default_power_max_iter(dim: usize, tol: f64) -> usize {
    let logs = (1.0 / tol).ln().ceil().max(1.0) as usize;
    10 * dim.max(1) * logs
}

const MAX_RESTARTS: usize = 8;

/// Largest algebraic eigenvalue of the symmetric linear map `apply`.
///
/// Plain power iteration finds the eigenvalue of largest magnitude, so the
/// map is shifted by `s = max_j Σ_i |A_ij|` (Gershgorin) before iterating.
/// `A + sI` is positive semidefinite and its dominant eigenvalue is
/// `λ_max(A) + s`. The convergence test uses the unshifted residual
/// `‖Av − λv‖ ≤ tol·max(1, |λ|)` with `λ` the Rayleigh quotient.
pub fn power_iteration<F>(
    apply: F,
    dim: usize,
    tol: f64,
    max_iter: usize,
    rng: &mut Rng,
) -> Result<EigResult>
where
    F: Fn(&[f64], &mut [f64]),
{
    if dim == 0 {
        return Err(Error::InvalidInput("power iteration needs dim >= 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidInput(format!("tol must be > 0, got {tol}")));
    }

    let mut unit = vec![0.0; dim];
    let mut col = vec![0.0; dim];
    let mut shift: f64 = 0.0;
    for j in 0..dim {
        unit[j] = 1.0;
        apply(&unit, &mut col);
        unit[j] = 0.0;
        shift = shift.max(col.iter().map(|v| v.abs()).sum());
    }
    if shift == 0.0 {
        // Zero operator: every vector is an eigenvector for 0.
        unit[0] = 1.0;
        return Ok(EigResult {
            value: 0.0,
            vector: unit,
            iterations: 0,
            converged: true,
        });
    }

    let mut v = random_unit(dim, rng);
    let mut av = vec![0.0; dim];
    let mut value = 0.0;
    let mut restarts = 0;
    for it in 1..=max_iter {
        apply(&v, &mut av);
        value = dot(&v, &av);
        let residual = av
            .iter()
            .zip(&v)
            .map(|(a, x)| (a - value * x).powi(2))
            .sum::<f64>()
            .sqrt();
        if residual <= tol * value.abs().max(1.0) {
            return Ok(EigResult {
                value,
                vector: v,
                iterations: it,
                converged: true,
            });
        }
        // w = (A + sI)v
        axpy(shift, &v, &mut av);
        let nw = norm(&av);
        if nw <= f64::EPSILON * shift {
            // v sits in the null space of A + sI; start over.
            if restarts == MAX_RESTARTS {
                break;
            }
            restarts += 1;
            v = random_unit(dim, rng);
            continue;
        }
        for (vi, wi) in v.iter_mut().zip(&av) {
            *vi = wi / nw;
        }
    }
    Ok(EigResult {
        value,
        vector: v,
        iterations: max_iter,
        converged: false,
    })
}

/// [`power_iteration`] on an explicit matrix.
pub fn power_iteration_sym(
    a: &SymMatrix,
    tol: f64,
    max_iter: usize,
    rng: &mut Rng,
) -> Result<EigResult> {
    power_iteration(|x, out| a.matvec(x, out), a.dim(), tol, max_iter, rng)
}

fn random_unit(dim: usize, rng: &mut Rng) -> Vec<f64> {
    loop {
        let mut v = rng.normals(dim);
        let n = norm(&v);
        if n > 1e-300 {
            v.iter_mut().for_each(|x| *x /= n);
            return v;
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least-squares line `y ≈ slope·x + intercept`.
pub fn linfit(xs: &[f64], ys: &[f64]) -> Result<LineFit> {
    check_dim(xs.len(), ys.len())?;
    if xs.len() < 2 {
        return Err(Error::InvalidInput(
            "linfit needs at least two points".into(),
        ));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateDesign("all x values are equal".into()));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| {
            let r = y - (slope * x + intercept);
            r * r
        })
        .sum();
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (1.0 - ss_res / syy).clamp(0.0, 1.0)
    };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
    })
}
