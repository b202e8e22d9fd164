//! Small dense linear algebra for d ∈ {2, 3} coefficient matrices and the
//! handful of tiny dense systems (effective-matrix inversion, Gram solves).

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Symmetric d×d matrix, d ≤ 3, stored row-major in a fixed array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SymMat {
    dim: usize,
    a: [f64; 9],
}

impl SymMat {
    pub fn zeros(dim: usize) -> Self {
        assert!((2..=3).contains(&dim));
        SymMat { dim, a: [0.0; 9] }
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.set(i, i, s);
        }
        m
    }

    pub fn diag(entries: &[f64]) -> Self {
        let mut m = Self::zeros(entries.len());
        for (i, &e) in entries.iter().enumerate() {
            m.set(i, i, e);
        }
        m
    }

    /// Builds from row-major entries, symmetrizing is NOT performed: the
    /// input must already be symmetric (checked to 1e-12 ulps of scale).
    pub fn from_rows(dim: usize, rows: &[f64]) -> Result<Self> {
        if !(2..=3).contains(&dim) || rows.len() != dim * dim {
            return Err(invalid("SymMat::from_rows: bad dimension"));
        }
        let mut m = Self::zeros(dim);
        m.a[..dim * dim].copy_from_slice(rows);
        let scale = rows.iter().fold(0.0f64, |s, x| s.max(x.abs())).max(1.0);
        for i in 0..dim {
            for j in 0..i {
                if (m.get(i, j) - m.get(j, i)).abs() > 1e-12 * scale {
                    return Err(invalid("SymMat::from_rows: not symmetric"));
                }
            }
        }
        Ok(m)
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i * self.dim + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.a[i * self.dim + j] = v;
        self.a[j * self.dim + i] = v;
    }

    pub fn rows(&self) -> &[f64] {
        &self.a[..self.dim * self.dim]
    }

    /// Quadratic form ξ·Aξ.
    #[inline]
    pub fn quad(&self, xi: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += xi[i] * self.get(i, j) * xi[j];
            }
        }
        s
    }

    /// out = A·v.
    #[inline]
    pub fn mul_vec(&self, v: &[f64], out: &mut [f64]) {
        for i in 0..self.dim {
            let mut s = 0.0;
            for j in 0..self.dim {
                s += self.get(i, j) * v[j];
            }
            out[i] = s;
        }
    }

    pub fn add(&self, other: &SymMat) -> SymMat {
        let mut m = *self;
        for k in 0..9 {
            m.a[k] += other.a[k];
        }
        m
    }

    pub fn scale(&self, s: f64) -> SymMat {
        let mut m = *self;
        for k in 0..9 {
            m.a[k] *= s;
        }
        m
    }

    /// Eigenvalues in ascending order (cyclic Jacobi; exact to ~1e-15 at d ≤ 3).
    pub fn eigenvalues(&self) -> Vec<f64> {
        let d = self.dim;
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = self.get(i, j);
            }
        }
        let mut v = vec![0.0; d * d];
        jacobi_eigen(d, &mut a, &mut v);
        let mut eig: Vec<f64> = (0..d).map(|i| a[i * d + i]).collect();
        eig.sort_by(|x, y| x.partial_cmp(y).unwrap());
        eig
    }

    /// True when the spectrum lies in [1, Λ] up to `tol` slack.
    pub fn within_band(&self, lambda_max: f64, tol: f64) -> bool {
        let eig = self.eigenvalues();
        eig[0] >= 1.0 - tol && eig[self.dim - 1] <= lambda_max + tol
    }

    pub fn inverse(&self) -> Result<SymMat> {
        let d = self.dim;
        let mut out = SymMat::zeros(d);
        match d {
            2 => {
                let det = self.get(0, 0) * self.get(1, 1) - self.get(0, 1) * self.get(1, 0);
                if det.abs() < 1e-300 {
                    return Err(Error::Singular("2x2 inverse".into()));
                }
                out.set(0, 0, self.get(1, 1) / det);
                out.set(1, 1, self.get(0, 0) / det);
                out.set(0, 1, -self.get(0, 1) / det);
            }
            3 => {
                let m = |i: usize, j: usize| self.get(i, j);
                let c00 = m(1, 1) * m(2, 2) - m(1, 2) * m(2, 1);
                let c01 = m(1, 2) * m(2, 0) - m(1, 0) * m(2, 2);
                let c02 = m(1, 0) * m(2, 1) - m(1, 1) * m(2, 0);
                let det = m(0, 0) * c00 + m(0, 1) * c01 + m(0, 2) * c02;
                if det.abs() < 1e-300 {
                    return Err(Error::Singular("3x3 inverse".into()));
                }
                out.set(0, 0, c00 / det);
                out.set(0, 1, (m(0, 2) * m(2, 1) - m(0, 1) * m(2, 2)) / det);
                out.set(0, 2, (m(0, 1) * m(1, 2) - m(0, 2) * m(1, 1)) / det);
                out.set(1, 1, (m(0, 0) * m(2, 2) - m(0, 2) * m(2, 0)) / det);
                out.set(1, 2, (m(0, 2) * m(1, 0) - m(0, 0) * m(1, 2)) / det);
                out.set(2, 2, (m(0, 0) * m(1, 1) - m(0, 1) * m(1, 0)) / det);
            }
            _ => unreachable!(),
        }
        Ok(out)
    }

    /// A^{-1/2} for symmetric positive definite A, via eigendecomposition.
    pub fn inv_sqrt(&self) -> Result<SymMat> {
        let d = self.dim;
        let mut a = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                a[i * d + j] = self.get(i, j);
            }
        }
        let mut vecs = vec![0.0; d * d];
        jacobi_eigen(d, &mut a, &mut vecs);
        let mut out = SymMat::zeros(d);
        for i in 0..d {
            let lam = a[i * d + i];
            if lam <= 0.0 {
                return Err(Error::Singular("inv_sqrt of non-positive matrix".into()));
            }
            let w = 1.0 / lam.sqrt();
            for r in 0..d {
                for c in r..d {
                    let v = out.get(r, c) + w * vecs[r * d + i] * vecs[c * d + i];
                    out.set(r, c, v);
                }
            }
        }
        Ok(out)
    }

    pub fn max_abs_diff(&self, other: &SymMat) -> f64 {
        let mut m = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                m = m.max((self.get(i, j) - other.get(i, j)).abs());
            }
        }
        m
    }
}

/// Cyclic Jacobi eigendecomposition of a small symmetric matrix, in place.
/// On return `a` holds the eigenvalues on its diagonal and `v` the
/// eigenvectors in columns.
pub fn jacobi_eigen(n: usize, a: &mut [f64], v: &mut [f64]) {
    for i in 0..n {
        for j in 0..n {
            v[i * n + j] = if i == j { 1.0 } else { 0.0 };
        }
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[p * n + q] * a[p * n + q];
            }
        }
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
}

/// Solves a small symmetric positive definite system by Cholesky.
pub fn cholesky_solve(n: usize, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= l[i * n + k] * l[j * n + k];
            }
            if i == j {
                if s <= 0.0 {
                    return Err(Error::Singular(format!("cholesky pivot {s:.3e} at {i}")));
                }
                l[i * n + i] = s.sqrt();
            } else {
                l[i * n + j] = s / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in (i + 1)..n {
            s -= l[k * n + i] * x[k];
        }
        x[i] = s / l[i * n + i];
    }
    Ok(x)
}

/// Ordinary/weighted least squares line fit y ≈ a + b·x.
/// Returns (intercept, slope, se_slope, r_squared). Weights must be positive.
pub fn weighted_line_fit(x: &[f64], y: &[f64], w: &[f64]) -> Result<(f64, f64, f64, f64)> {
    if x.len() < 2 || x.len() != y.len() || x.len() != w.len() {
        return Err(invalid("line fit needs at least two matched points"));
    }
    let sw: f64 = w.iter().sum();
    let xb = x.iter().zip(w).map(|(xi, wi)| wi * xi).sum::<f64>() / sw;
    let yb = y.iter().zip(w).map(|(yi, wi)| wi * yi).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(w).map(|(xi, wi)| wi * (xi - xb) * (xi - xb)).sum();
    if sxx <= 0.0 {
        return Err(Error::Singular("degenerate abscissae in line fit".into()));
    }
    let sxy: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((xi, yi), wi)| wi * (xi - xb) * (yi - yb))
        .sum();
    let slope = sxy / sxx;
    let intercept = yb - slope * xb;
    // Known-variance weighting (w = 1/σ²) gives Var(slope) = 1/Sxx; for
    // unit weights fall back to the residual-based estimate.
    let uniform = w.iter().all(|&wi| (wi - w[0]).abs() < 1e-12 * w[0].abs().max(1.0));
    let n = x.len() as f64;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .zip(w)
        .map(|((xi, yi), wi)| {
            let r = yi - intercept - slope * xi;
            wi * r * r
        })
        .sum();
    let ss_tot: f64 = y.iter().zip(w).map(|(yi, wi)| wi * (yi - yb) * (yi - yb)).sum();
    let se_slope = if uniform && n > 2.0 {
        (ss_res / (w[0] * (n - 2.0)) / (sxx / w[0])).sqrt()
    } else {
        (1.0 / sxx).sqrt()
    };
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    Ok((intercept, slope, se_slope, r2))
}
