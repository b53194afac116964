//! Penalized cubic regression spline written as a Gaussian mixed model.
//!
//! The smooth's basis coefficients play the role of Ψ, and
//! θ = (intercept, log σ, log λ). The penalty `½ λ ΨᵀSΨ` is the
//! log-density of an (improper) Gaussian prior on Ψ, so
//!
//! ```text
//! l_c = Σ log N(y_i; intercept + (XΨ)_i, σ²)
//! l_r = -½ λ ΨᵀSΨ + ½ rank(S) log λ + ½ log|S|₊ - ½ rank(S) log 2π
//! ```
//!
//! The basis is a cubic B-spline on quantile knots with an exact integrated
//! squared second-derivative penalty. A sum-to-zero reparameterization
//! removes the direction confounded with the intercept, leaving `K - 1`
//! coefficients whose design columns are centered.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::{numerical_rank, relative_asymmetry, symmetrize};
use crate::model_core::{JointEval, JointModel, PriorMean, Transform};

const DEGREE: usize = 3;

/// A cubic B-spline basis and its second-derivative penalty.
#[derive(Debug, Clone)]
pub struct SplineBasis {
    /// Full knot vector with boundary knots repeated `DEGREE + 1` times.
    pub knots: Vec<f64>,
    /// `N × K` basis evaluated at the covariate, before the constraint.
    pub raw_design: DMatrix<f64>,
    /// `K × K` Gram matrix of second derivatives.
    pub raw_penalty: DMatrix<f64>,
    /// `K × (K-1)` map from constrained to raw coefficients.
    pub constraint: DMatrix<f64>,
    /// `N × (K-1)` centered design.
    pub design: DMatrix<f64>,
    /// `(K-1) × (K-1)` penalty on the constrained coefficients.
    pub penalty: DMatrix<f64>,
    pub penalty_rank: usize,
}

fn distinct_sorted(x: &[f64]) -> Vec<f64> {
    let mut v: Vec<f64> = x.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v.dedup();
    v
}

/// Type-7 sample quantile of sorted data.
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

/// Index `k` of the knot span `[t_k, t_{k+1})` containing `x`; the right
/// boundary belongs to the last non-empty span.
fn find_span(knots: &[f64], n_basis: usize, x: f64) -> usize {
    let last = n_basis - 1;
    if x >= knots[last + 1] {
        return last;
    }
    let mut k = DEGREE;
    while k < last && x >= knots[k + 1] {
        k += 1;
    }
    k
}

/// Values of the `deriv`-th derivative of every basis function at `x`,
/// using the polynomial piece of span `span`.
fn basis_in_span(knots: &[f64], n_basis: usize, span: usize, x: f64, deriv: usize) -> Vec<f64> {
    let m = knots.len();
    // table[q][i] = N_{i,q}(x)
    let mut table = vec![vec![0.0; m - 1]; DEGREE + 1];
    table[0][span] = 1.0;
    for q in 1..=DEGREE {
        for i in 0..(m - 1 - q) {
            let left = ratio(x - knots[i], knots[i + q] - knots[i]) * table[q - 1][i];
            let right = ratio(knots[i + q + 1] - x, knots[i + q + 1] - knots[i + 1]) * table[q - 1][i + 1];
            table[q][i] = left + right;
        }
    }
    fn d(table: &[Vec<f64>], knots: &[f64], i: usize, q: usize, r: usize) -> f64 {
        if r == 0 {
            return table[q][i];
        }
        let qf = q as f64;
        qf * (ratio(d(table, knots, i, q - 1, r - 1), knots[i + q] - knots[i])
            - ratio(d(table, knots, i + 1, q - 1, r - 1), knots[i + q + 1] - knots[i + 1]))
    }
    (0..n_basis).map(|i| d(&table, knots, i, DEGREE, deriv)).collect()
}

/// Orthonormal basis of the complement of `c`, via a Householder reflection.
fn null_complement(c: &DVector<f64>) -> DMatrix<f64> {
    let k = c.len();
    let norm = c.norm();
    let mut v = c.clone();
    v[0] += if c[0] >= 0.0 { norm } else { -norm };
    let vv = v.dot(&v);
    let h = DMatrix::identity(k, k) - (&v * v.transpose()) * (2.0 / vv);
    h.columns(1, k - 1).into_owned()
}

/// Cubic B-spline basis of dimension `k` on quantile knots of `x`.
pub fn cubic_bspline_basis(x: &[f64], k: usize) -> Result<SplineBasis> {
    if k < DEGREE + 1 {
        return Err(Error::domain("K", format!("basis dimension must be at least 4, got {k}")));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("x", "non-finite covariate value"));
    }
    let distinct = distinct_sorted(x);
    if distinct.len() < k {
        return Err(Error::domain(
            "x",
            format!("{} distinct covariate values is fewer than the basis dimension {k}", distinct.len()),
        ));
    }
    let (a, b) = (distinct[0], distinct[distinct.len() - 1]);
    let n_interior = k - DEGREE - 1;
    let mut knots = vec![a; DEGREE + 1];
    for j in 1..=n_interior {
        knots.push(quantile_sorted(&distinct, j as f64 / (n_interior + 1) as f64));
    }
    knots.extend(std::iter::repeat_n(b, DEGREE + 1));

    let raw_design = DMatrix::from_fn(x.len(), k, |_, _| 0.0);
    let mut raw_design = raw_design;
    for (r, &xv) in x.iter().enumerate() {
        let span = find_span(&knots, k, xv);
        let row = basis_in_span(&knots, k, span, xv, 0);
        for (c, v) in row.into_iter().enumerate() {
            raw_design[(r, c)] = v;
        }
    }

    // B'' is linear on each span, so Simpson's rule integrates B_i'' B_j'' exactly.
    let mut raw_penalty = DMatrix::zeros(k, k);
    for span in DEGREE..k {
        let (lo, hi) = (knots[span], knots[span + 1]);
        if hi <= lo {
            continue;
        }
        let h = hi - lo;
        for (w, xv) in [(1.0, lo), (4.0, 0.5 * (lo + hi)), (1.0, hi)] {
            let d2 = DVector::from_vec(basis_in_span(&knots, k, span, xv, 2));
            raw_penalty += (&d2 * d2.transpose()) * (w * h / 6.0);
        }
    }
    let raw_penalty = symmetrize(&raw_penalty);

    let col_sums = DVector::from_fn(k, |j, _| raw_design.column(j).sum());
    let constraint = null_complement(&col_sums);
    let design = &raw_design * &constraint;
    let penalty = symmetrize(&(constraint.transpose() * &raw_penalty * &constraint));
    Ok(SplineBasis {
        knots,
        raw_design,
        raw_penalty,
        constraint,
        design,
        penalty,
        penalty_rank: k - 2,
    })
}

/// Data and smoother structure for the penalized spline model.
#[derive(Debug, Clone)]
pub struct SplineData {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// Centered `N × p` design.
    pub design: DMatrix<f64>,
    pub penalty: DMatrix<f64>,
    pub penalty_rank: usize,
    /// Log pseudo-determinant of the penalty.
    pub log_pdet: f64,
}

impl SplineData {
    /// Use a cubic B-spline basis of dimension `k` on `x`.
    pub fn with_bspline(x: Vec<f64>, y: Vec<f64>, k: usize) -> Result<Self> {
        let basis = cubic_bspline_basis(&x, k)?;
        Self::new(x, y, basis.design, basis.penalty, Some(basis.penalty_rank))
    }

    /// Externally supplied design and penalty. Design columns are centered;
    /// the penalty rank is computed numerically when not given.
    pub fn new(
        x: Vec<f64>,
        y: Vec<f64>,
        design: DMatrix<f64>,
        penalty: DMatrix<f64>,
        penalty_rank: Option<usize>,
    ) -> Result<Self> {
        let n = y.len();
        if x.len() != n || design.nrows() != n {
            return Err(Error::Contract(format!(
                "x has {} rows, y {} and the design {}",
                x.len(),
                n,
                design.nrows()
            )));
        }
        let p = design.ncols();
        if penalty.shape() != (p, p) {
            return Err(Error::Contract(format!(
                "penalty is {:?} but the design has {p} columns",
                penalty.shape()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("y", "non-finite response"));
        }
        if design.iter().chain(penalty.iter()).any(|v| !v.is_finite()) {
            return Err(Error::domain("design", "non-finite basis or penalty entry"));
        }
        let mut design = design;
        for mut col in design.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
        if numerical_rank(&design, 1e-10) < p {
            return Err(Error::domain("design", "design is not of full column rank after centering"));
        }
        if relative_asymmetry(&penalty) > 1e-10 {
            return Err(Error::domain("penalty", "penalty matrix is not symmetric"));
        }
        let penalty = symmetrize(&penalty);
        let eig = SymmetricEigen::new(penalty.clone());
        let max_eig = eig.eigenvalues.max();
        if eig.eigenvalues.min() < -1e-10 * max_eig.abs() {
            return Err(Error::domain("penalty", "penalty matrix is not positive semidefinite"));
        }
        let rank = penalty_rank.unwrap_or_else(|| numerical_rank(&penalty, 1e-10));
        let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
        ev.sort_by(|a, b| b.partial_cmp(a).unwrap());
        if rank > 0 && !(ev[rank - 1] > 0.0) {
            return Err(Error::domain("penalty", format!("stated rank {rank} exceeds the numerical rank")));
        }
        let log_pdet = ev[..rank].iter().map(|v| v.ln()).sum();
        Ok(Self {
            x,
            y,
            design,
            penalty,
            penalty_rank: rank,
            log_pdet,
        })
    }
}

#[derive(Debug, Clone)]
pub struct SplineModel {
    y: DVector<f64>,
    design: DMatrix<f64>,
    penalty: DMatrix<f64>,
    penalty_rank: usize,
    log_pdet: f64,
    xtx: DMatrix<f64>,
    xt_one: DVector<f64>,
}

pub fn build_spline_model(data: &SplineData) -> SplineModel {
    let xtx = data.design.transpose() * &data.design;
    let xt_one = DVector::from_fn(data.design.ncols(), |j, _| data.design.column(j).sum());
    SplineModel {
        y: DVector::from_column_slice(&data.y),
        design: data.design.clone(),
        penalty: data.penalty.clone(),
        penalty_rank: data.penalty_rank,
        log_pdet: data.log_pdet,
        xtx: symmetrize(&xtx),
        xt_one,
    }
}

impl SplineModel {
    pub fn design(&self) -> &DMatrix<f64> {
        &self.design
    }

    pub fn penalty(&self) -> &DMatrix<f64> {
        &self.penalty
    }

    pub fn penalty_rank(&self) -> usize {
        self.penalty_rank
    }

    pub fn n_obs(&self) -> usize {
        self.y.len()
    }

    fn split(&self, theta: &DVector<f64>) -> Result<(f64, f64, f64)> {
        if theta.len() != 3 {
            return Err(Error::Contract(format!("spline theta has 3 components, got {}", theta.len())));
        }
        let var = (2.0 * theta[1]).exp();
        let lambda = theta[2].exp();
        if !(var > 0.0) || !var.is_finite() {
            return Err(Error::domain("log_sigma", "residual variance is zero or infinite"));
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::domain("log_lambda", "smoothing parameter is zero or infinite"));
        }
        Ok((theta[0], var, lambda))
    }

    fn check_psi(&self, psi: &DVector<f64>) -> Result<()> {
        if psi.len() != self.design.ncols() {
            return Err(Error::Contract(format!(
                "spline psi has {} coefficients, got {}",
                self.design.ncols(),
                psi.len()
            )));
        }
        Ok(())
    }

    fn residual(&self, psi: &DVector<f64>, intercept: f64) -> DVector<f64> {
        let mut r = &self.y - &self.design * psi;
        r.add_scalar_mut(-intercept);
        r
    }

    fn values(&self, resid: &DVector<f64>, psi: &DVector<f64>, var: f64, lambda: f64) -> (f64, f64) {
        let n = self.y.len() as f64;
        let l_c = -0.5 * n * (2.0 * PI * var).ln() - resid.norm_squared() / (2.0 * var);
        let quad = psi.dot(&(&self.penalty * psi));
        let r = self.penalty_rank as f64;
        let l_r = -0.5 * lambda * quad + 0.5 * r * lambda.ln() + 0.5 * self.log_pdet - 0.5 * r * (2.0 * PI).ln();
        (l_c, l_r)
    }
}

impl JointModel for SplineModel {
    fn psi_dim(&self) -> usize {
        self.design.ncols()
    }

    fn theta_dim(&self) -> usize {
        3
    }

    fn theta_template(&self) -> (Vec<String>, Vec<Transform>) {
        (
            vec!["intercept".into(), "log_sigma".into(), "log_lambda".into()],
            vec![Transform::Identity, Transform::Exp, Transform::Exp],
        )
    }

    fn eval(&self, psi: &DVector<f64>, theta: &DVector<f64>) -> Result<JointEval> {
        self.check_psi(psi)?;
        let (intercept, var, lambda) = self.split(theta)?;
        let resid = self.residual(psi, intercept);
        let (l_c, l_r) = self.values(&resid, psi, var, lambda);
        let grad_c = self.design.transpose() * &resid / var;
        let s_psi = &self.penalty * psi;
        let grad_r = &s_psi * -lambda;
        let hess_r = &self.penalty * -lambda;
        let hess_j = &self.xtx * (-1.0 / var) + &hess_r;
        let mut cross_theta = DMatrix::zeros(psi.len(), 3);
        cross_theta.set_column(0, &(&self.xt_one * (-1.0 / var)));
        cross_theta.set_column(1, &(&grad_c * -2.0));
        cross_theta.set_column(2, &grad_r);
        Ok(JointEval {
            l_c,
            l_r,
            grad_psi: grad_c + grad_r,
            hess_j,
            hess_r,
            cross_theta,
        })
    }

    fn log_densities(&self, psi: &DVector<f64>, theta: &DVector<f64>) -> Result<(f64, f64)> {
        self.check_psi(psi)?;
        let (intercept, var, lambda) = self.split(theta)?;
        let resid = self.residual(psi, intercept);
        Ok(self.values(&resid, psi, var, lambda))
    }

    fn conditional_hessian(&self, psi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_psi(psi)?;
        let (_, var, _) = self.split(theta)?;
        let x = &self.design;
        Ok(symmetrize(&(x.transpose() * x)) * (-1.0 / var))
    }

    fn prior(&self, _theta: &DVector<f64>) -> Result<PriorMean> {
        Ok(PriorMean::zero(self.psi_dim(), 3))
    }

    fn obs_units(&self) -> usize {
        self.y.len()
    }

    fn unit_has_data(&self) -> Vec<bool> {
        vec![true; self.y.len()]
    }

    // smoothing-parameter uncertainty is neglected
    fn fixed_in_covariance(&self) -> Vec<bool> {
        vec![false, false, true]
    }

    fn variance_ratios(&self, theta: &DVector<f64>) -> Vec<f64> {
        // prior variance scale 1/λ against the residual variance σ²
        vec![(-theta[2] - 2.0 * theta[1]).exp()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn years() -> Vec<f64> {
        (1850..=2010).map(|y| y as f64).collect()
    }

    #[test]
    fn raw_basis_is_partition_of_unity() {
        let b = cubic_bspline_basis(&years(), 20).unwrap();
        for r in 0..b.raw_design.nrows() {
            assert!((b.raw_design.row(r).sum() - 1.0).abs() < 1e-12, "row {r}");
        }
    }

    #[test]
    fn penalty_annihilates_linear_functions() {
        let b = cubic_bspline_basis(&years(), 12).unwrap();
        let k = 12;
        // B-spline coefficients of f(x) = x are the Greville abscissae.
        let greville = DVector::from_fn(k, |i, _| (b.knots[i + 1] + b.knots[i + 2] + b.knots[i + 3]) / 3.0);
        let ones = DVector::from_element(k, 1.0);
        let scale = b.raw_penalty.amax() * greville.amax();
        assert!((&b.raw_penalty * &greville).amax() < 1e-8 * scale);
        assert!((&b.raw_penalty * &ones).amax() < 1e-8 * b.raw_penalty.amax());
        // the linear fit reproduces x exactly
        let fitted = &b.raw_design * &greville;
        for (f, x) in fitted.iter().zip(years()) {
            assert!((f - x).abs() < 1e-9);
        }
    }

    #[test]
    fn penalty_rank_k50() {
        let b = cubic_bspline_basis(&years(), 50).unwrap();
        assert_eq!(numerical_rank(&b.raw_penalty, 1e-10), 48);
        assert_eq!(numerical_rank(&b.penalty, 1e-10), 48);
        assert_eq!(b.penalty_rank, 48);
        assert_eq!(b.design.ncols(), 49);
        for j in 0..49 {
            assert!(b.design.column(j).sum().abs() < 1e-10);
        }
    }

    #[test]
    fn too_few_distinct_values() {
        let x = vec![1.0, 1.0, 2.0, 2.0, 3.0];
        assert!(matches!(cubic_bspline_basis(&x, 4), Err(Error::Domain { .. })));
    }

    #[test]
    fn penalty_matches_quadrature() {
        // compare the exact Gram matrix with a fine midpoint rule
        let x = years();
        let k = 8;
        let b = cubic_bspline_basis(&x, k).unwrap();
        let (a, e) = (1850.0, 2010.0);
        let m = 20000;
        let h = (e - a) / m as f64;
        let mut s = DMatrix::zeros(k, k);
        for i in 0..m {
            let xv = a + (i as f64 + 0.5) * h;
            let span = find_span(&b.knots, k, xv);
            let d2 = DVector::from_vec(basis_in_span(&b.knots, k, span, xv, 2));
            s += (&d2 * d2.transpose()) * h;
        }
        assert!((s - &b.raw_penalty).amax() < 1e-6 * b.raw_penalty.amax());
    }
}
