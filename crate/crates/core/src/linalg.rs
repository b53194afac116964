//! Small dense linear-algebra helpers shared by the estimation modules.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

/// `(A + Aᵀ) / 2`.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// Largest absolute asymmetry relative to the largest absolute entry.
pub fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax().max(f64::MIN_POSITIVE);
    (a - a.transpose()).amax() / scale
}

/// Cholesky factor of a symmetric positive-definite matrix, either dense or
/// exploiting a known half-bandwidth.
#[derive(Debug, Clone)]
pub enum SpdFactor {
    Dense(Cholesky<f64, Dyn>),
    Banded(BandedCholesky),
}

impl SpdFactor {
    /// Factor `a`. Returns `None` if `a` is not numerically positive definite.
    pub fn new(a: &DMatrix<f64>, bandwidth: Option<usize>) -> Option<Self> {
        match bandwidth {
            Some(bw) if bw + 1 < a.nrows() => BandedCholesky::new(a, bw).map(SpdFactor::Banded),
            _ => Cholesky::new(a.clone()).map(SpdFactor::Dense),
        }
    }

    pub fn solve_vec(&self, b: &DVector<f64>) -> DVector<f64> {
        match self {
            SpdFactor::Dense(c) => c.solve(b),
            SpdFactor::Banded(c) => c.solve(b),
        }
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            SpdFactor::Dense(c) => c.solve(b),
            SpdFactor::Banded(c) => {
                let mut out = DMatrix::zeros(b.nrows(), b.ncols());
                for j in 0..b.ncols() {
                    out.set_column(j, &c.solve(&b.column(j).into_owned()));
                }
                out
            }
        }
    }

    pub fn log_det(&self) -> f64 {
        match self {
            SpdFactor::Dense(c) => 2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>(),
            SpdFactor::Banded(c) => c.log_det(),
        }
    }
}

/// Cholesky factorization `A = L Lᵀ` of a banded SPD matrix.
///
/// Row `i` of `l` stores `L[i, i-bw ..= i]`, left-padded with zeros.
#[derive(Debug, Clone)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn new(a: &DMatrix<f64>, bw: usize) -> Option<Self> {
        let n = a.nrows();
        let w = bw + 1;
        let mut l = vec![0.0; n * w];
        let at = |l: &Vec<f64>, i: usize, j: usize| l[i * w + (j + bw - i)];
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let mut s = a[(i, j)];
                let k0 = j0.max(j.saturating_sub(bw));
                for k in k0..j {
                    s -= at(&l, i, k) * at(&l, j, k);
                }
                if i == j {
                    if !(s > 0.0) || !s.is_finite() {
                        return None;
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / at(&l, j, j);
                }
            }
        }
        Some(Self { n, bw, l })
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.l[i * (self.bw + 1) + (j + self.bw - i)]
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let n = self.n;
        let mut y = b.clone();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(self.bw)..i {
                s -= self.get(i, k) * y[k];
            }
            y[i] = s / self.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in (i + 1)..n.min(i + self.bw + 1) {
                s -= self.get(k, i) * y[k];
            }
            y[i] = s / self.get(i, i);
        }
        y
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (0..self.n).map(|i| self.get(i, i).ln()).sum::<f64>()
    }
}

/// Symmetric matrix with negative eigenvalues truncated at zero.
///
/// Returns the (possibly unchanged) matrix and the smallest eigenvalue found
/// before truncation. Matrices that are already PSD are returned as their
/// symmetrized input so that exact identities survive.
pub fn clamp_psd(a: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let sym = symmetrize(a);
    if sym.nrows() == 0 {
        return (sym, 0.0);
    }
    let eig = SymmetricEigen::new(sym.clone());
    let min_eig = eig.eigenvalues.min();
    if min_eig >= 0.0 {
        return (sym, min_eig);
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let out = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    (symmetrize(&out), min_eig)
}

/// Eigenvector of the smallest eigenvalue of a symmetric matrix.
pub fn null_direction(a: &DMatrix<f64>) -> Vec<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let idx = eig.eigenvalues.imin();
    eig.eigenvectors.column(idx).iter().copied().collect()
}

/// Numerical rank by singular values above `rel_tol * largest`.
pub fn numerical_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    let sv = a.clone().singular_values();
    let max = sv.max();
    if max <= 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * max).count()
}
