//! Maximum Laplace-approximate marginal likelihood estimation of θ, and
//! `Cov(θ̂) = -l̈_m⁻¹(θ̂)` from a finite-difference Hessian.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::laplace::{laml_raw, solve_at, InnerSolution};
use crate::linalg::{null_direction, symmetrize};
use crate::model_core::{fd_gradient, fd_hessian_with_steps, JointModel, ThetaVector};

pub const MAX_EVALUATIONS: usize = 500;
pub const REL_CHANGE_TOL: f64 = 1e-10;
pub const GRADIENT_TOL: f64 = 1e-6;
/// Central-difference step for the marginal Hessian.
pub const COV_STEP: f64 = 1e-4;
/// Natural-scale variance ratios outside this range flag a boundary fit.
pub const RATIO_BOUNDS: (f64, f64) = (1e-6, 1e6);
/// Relative eigenvalue below which the finite-difference marginal Hessian
/// counts as singular; well above its rounding noise.
pub const SINGULAR_REL: f64 = 1e-6;
const MAX_STEP: f64 = 5.0;
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct OuterFit {
    pub theta_hat: ThetaVector,
    /// On the unconstrained scale.
    pub cov_theta: DMatrix<f64>,
    pub laml_at_opt: f64,
    pub inner: InnerSolution,
    pub converged: bool,
    /// Points at which LAML was evaluated, finite-difference probes excluded.
    pub evaluations: usize,
    pub gradient: DVector<f64>,
    pub boundary_suspect: bool,
}

struct Objective<'a> {
    model: &'a dyn JointModel,
    evaluations: usize,
}

impl Objective<'_> {
    fn value(&mut self, theta: &DVector<f64>) -> Result<f64> {
        self.evaluations += 1;
        Ok(-laml_raw(self.model, theta)?)
    }

    fn gradient(&self, theta: &DVector<f64>) -> Result<DVector<f64>> {
        fd_gradient(|t| Ok(-laml_raw(self.model, t)?), theta)
    }
}

fn gradient_ok(g: &DVector<f64>, f: f64) -> bool {
    g.amax() < GRADIENT_TOL * f.abs().max(1.0)
}

/// Maximize LAML over θ by BFGS with backtracking, then compute Cov(θ̂)
/// holding the model's fixed components (if any) known.
pub fn maximize_laml(model: &dyn JointModel, theta0: &ThetaVector) -> Result<OuterFit> {
    if theta0.len() != model.theta_dim() {
        return Err(Error::Contract(format!(
            "model expects {} parameters, got {}",
            model.theta_dim(),
            theta0.len()
        )));
    }
    let mut obj = Objective { model, evaluations: 0 };
    let mut x = theta0.as_dvector();
    let mut f = match obj.value(&x) {
        Ok(v) if v.is_finite() => v,
        Ok(_) => return Err(Error::domain("theta0", "LAML is not finite at the starting values")),
        Err(e) => return Err(Error::domain("theta0", format!("LAML cannot be evaluated at the starting values: {e}"))),
    };
    let mut g = obj.gradient(&x)?;
    let n = x.len();
    let mut h_inv = DMatrix::identity(n, n) * (1.0 / g.amax().max(1.0));
    let mut first_update = true;
    let mut trace: Vec<Vec<f64>> = vec![x.iter().copied().collect()];
    let mut last_change = f64::INFINITY;
    let mut iterations = 0;

    let converged = loop {
        if gradient_ok(&g, f) && (iterations == 0 || last_change < REL_CHANGE_TOL) {
            break true;
        }
        if obj.evaluations >= MAX_EVALUATIONS {
            break false;
        }
        let mut p = -(&h_inv * &g);
        let mut slope = g.dot(&p);
        if !(slope < 0.0) {
            h_inv = DMatrix::identity(n, n) * (1.0 / g.amax().max(1.0));
            p = -(&h_inv * &g);
            slope = g.dot(&p);
        }
        let pmax = p.amax();
        if pmax > MAX_STEP {
            p *= MAX_STEP / pmax;
            slope = g.dot(&p);
        }
        let mut alpha = 1.0;
        let mut next = None;
        while obj.evaluations < MAX_EVALUATIONS {
            let trial = &x + &p * alpha;
            if let Ok(ft) = obj.value(&trial) {
                if ft.is_finite() && ft <= f + ARMIJO * alpha * slope {
                    next = Some((trial, ft));
                    break;
                }
            }
            alpha *= 0.5;
            if alpha < 1e-12 {
                break;
            }
        }
        iterations += 1;
        let Some((x_new, f_new)) = next else {
            // no further decrease is possible at working precision
            break gradient_ok(&g, f) || g.amax() < 100.0 * GRADIENT_TOL * f.abs().max(1.0);
        };
        let g_new = obj.gradient(&x_new)?;
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 * s.norm() * y.norm() {
            if first_update {
                h_inv = DMatrix::identity(n, n) * (sy / y.dot(&y));
                first_update = false;
            }
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - (&s * y.transpose()) * rho;
            h_inv = &a * &h_inv * a.transpose() + (&s * s.transpose()) * rho;
        }
        last_change = (f - f_new).abs() / f.abs().max(1.0);
        x = x_new;
        f = f_new;
        g = g_new;
        trace.push(x.iter().copied().collect());
        if trace.len() > 5 {
            trace.remove(0);
        }
    };

    if !converged {
        return Err(Error::Optimizer {
            iterations,
            grad_norm: g.amax(),
            trace,
        });
    }

    let inner = solve_at(model, &x)?;
    let theta_hat = model.theta_vector(x.as_slice())?;
    let cov = cov_theta(model, &theta_hat, &model.fixed_in_covariance())?;
    let boundary_suspect = model
        .variance_ratios(&x)
        .iter()
        .any(|r| !(RATIO_BOUNDS.0..=RATIO_BOUNDS.1).contains(r));
    Ok(OuterFit {
        theta_hat,
        cov_theta: cov,
        laml_at_opt: inner.laml,
        inner,
        converged,
        evaluations: obj.evaluations,
        gradient: g,
        boundary_suspect,
    })
}

/// `Cov(θ̂) = (-∂²LAML/∂θ∂θᵀ)⁻¹` on the unconstrained scale.
///
/// Components under `fixed_mask` are treated as known: their rows and
/// columns are dropped before inversion and come back as zeros.
pub fn cov_theta(model: &dyn JointModel, theta_hat: &ThetaVector, fixed_mask: &[bool]) -> Result<DMatrix<f64>> {
    let n = theta_hat.len();
    if fixed_mask.len() != n {
        return Err(Error::Contract(format!("fixed mask has length {} for {n} parameters", fixed_mask.len())));
    }
    let free: Vec<usize> = (0..n).filter(|&i| !fixed_mask[i]).collect();
    let mut out = DMatrix::zeros(n, n);
    if free.is_empty() {
        return Ok(out);
    }
    let full = theta_hat.as_dvector();
    let reduced = DVector::from_iterator(free.len(), free.iter().map(|&i| full[i]));
    let embed = |r: &DVector<f64>| {
        let mut t = full.clone();
        for (k, &i) in free.iter().enumerate() {
            t[i] = r[k];
        }
        t
    };
    let steps = vec![COV_STEP; free.len()];
    let neg_hess = fd_hessian_with_steps(|r| Ok(-laml_raw(model, &embed(r))?), &reduced, &steps)?;
    let eig = SymmetricEigen::new(symmetrize(&neg_hess));
    let max_eig = eig.eigenvalues.amax();
    let min_eig = eig.eigenvalues.min();
    if !(max_eig > 0.0) || min_eig.abs() <= SINGULAR_REL * max_eig {
        let dir = null_direction(&neg_hess);
        let mut direction = vec![0.0; n];
        for (k, &i) in free.iter().enumerate() {
            direction[i] = dir[k];
        }
        return Err(Error::RankDeficient {
            context: "marginal Hessian of theta is singular".into(),
            direction,
        });
    }
    // inverse through the eigenbasis, negative curvature clamped to zero variance
    let inv_vals = eig.eigenvalues.map(|v| if v > 0.0 { 1.0 / v } else { 0.0 });
    let inv = &eig.eigenvectors * DMatrix::from_diagonal(&inv_vals) * eig.eigenvectors.transpose();
    let inv = symmetrize(&inv);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            out[(i, j)] = inv[(a, b)];
        }
    }
    Ok(out)
}
