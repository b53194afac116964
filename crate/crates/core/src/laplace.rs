//! Inner optimization: the posterior mode Ψ̂(θ), the Laplace-approximate
//! marginal log-likelihood and the mode's sensitivity to θ.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg::SpdFactor;
use crate::model_core::{check_dims, JointModel, PsiVector, ThetaVector};

pub const GRADIENT_TOL: f64 = 1e-8;
pub const MAX_ITERATIONS: usize = 100;
const ARMIJO: f64 = 1e-4;
const MAX_HALVINGS: usize = 60;

/// The joint log-likelihood at its mode for fixed θ.
#[derive(Debug, Clone)]
pub struct InnerSolution {
    pub theta: DVector<f64>,
    pub psi_hat: PsiVector,
    pub l_c: f64,
    pub l_r: f64,
    pub hess_j: DMatrix<f64>,
    pub hess_r: DMatrix<f64>,
    pub cross_theta: DMatrix<f64>,
    pub laml: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

impl InnerSolution {
    pub fn l_j(&self) -> f64 {
        self.l_c + self.l_r
    }

    pub fn hess_c(&self) -> DMatrix<f64> {
        &self.hess_j - &self.hess_r
    }

    pub fn psi_dim(&self) -> usize {
        self.psi_hat.dim()
    }

    /// Cholesky factor of `-hess_j`.
    pub fn neg_hess_factor(&self) -> Result<SpdFactor> {
        SpdFactor::new(&(-&self.hess_j), None)
            .ok_or_else(|| Error::Curvature("-hess_j is not positive definite at the mode".into()))
    }
}

fn grad_tolerance(l_j: f64) -> f64 {
    GRADIENT_TOL * l_j.abs().max(1.0)
}

fn factor_neg(h: &DMatrix<f64>, bandwidth: Option<usize>) -> Result<SpdFactor> {
    SpdFactor::new(&(-h), bandwidth)
        .ok_or_else(|| Error::Curvature("-hess_j is not positive definite".into()))
}

/// Newton iterations with halving backtracking from `psi0`.
pub fn inner_newton(model: &dyn JointModel, theta: &ThetaVector, psi0: &PsiVector) -> Result<InnerSolution> {
    check_dims(model, psi0.dim(), theta.len())?;
    inner_newton_raw(model, &theta.as_dvector(), psi0.values.clone())
}

pub(crate) fn inner_newton_raw(
    model: &dyn JointModel,
    theta: &DVector<f64>,
    mut psi: DVector<f64>,
) -> Result<InnerSolution> {
    let bandwidth = model.bandwidth();
    let mut eval = model.eval(&psi, theta)?;
    if !eval.l_j().is_finite() {
        return Err(Error::domain("psi0", "joint log-likelihood is not finite at the start"));
    }
    let mut iterations = 0;
    loop {
        let l_j = eval.l_j();
        let grad_norm = eval.grad_psi.amax();
        let factor = factor_neg(&eval.hess_j, bandwidth)?;
        if grad_norm < grad_tolerance(l_j) || psi.is_empty() {
            let log_det = factor.log_det();
            let laml = l_j - 0.5 * log_det + 0.5 * psi.len() as f64 * (2.0 * PI).ln();
            return Ok(InnerSolution {
                theta: theta.clone(),
                psi_hat: PsiVector { values: psi },
                l_c: eval.l_c,
                l_r: eval.l_r,
                hess_j: eval.hess_j,
                hess_r: eval.hess_r,
                cross_theta: eval.cross_theta,
                laml,
                iterations,
                grad_norm,
            });
        }
        if iterations >= MAX_ITERATIONS {
            return Err(Error::Optimizer {
                iterations,
                grad_norm,
                trace: vec![psi.iter().copied().collect()],
            });
        }
        let step = factor.solve_vec(&eval.grad_psi);
        let slope = eval.grad_psi.dot(&step);
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_HALVINGS {
            let trial = &psi + &step * alpha;
            if let Ok((lc, lr)) = model.log_densities(&trial, theta) {
                let v = lc + lr;
                if v.is_finite() && v >= l_j + ARMIJO * alpha * slope {
                    accepted = Some(trial);
                    break;
                }
            }
            alpha *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some(next) => {
                psi = next;
                eval = model.eval(&psi, theta)?;
            }
            None => {
                return Err(Error::Optimizer {
                    iterations,
                    grad_norm,
                    trace: vec![psi.iter().copied().collect()],
                })
            }
        }
    }
}

/// Inner solution started from the prior mean.
pub fn solve_at(model: &dyn JointModel, theta: &DVector<f64>) -> Result<InnerSolution> {
    if theta.len() != model.theta_dim() {
        return Err(Error::Contract(format!(
            "model expects {} parameters, got {}",
            model.theta_dim(),
            theta.len()
        )));
    }
    let psi0 = model.prior(theta)?.mean;
    inner_newton_raw(model, theta, psi0)
}

/// Laplace-approximate marginal log-likelihood
/// `l_j(Ψ̂, θ) - ½ log det(-l̈_j) + (dim Ψ / 2) log 2π`.
pub fn laml(model: &dyn JointModel, theta: &ThetaVector) -> Result<f64> {
    Ok(solve_at(model, &theta.as_dvector())?.laml)
}

pub(crate) fn laml_raw(model: &dyn JointModel, theta: &DVector<f64>) -> Result<f64> {
    Ok(solve_at(model, theta)?.laml)
}

/// ∂Ψ̂/∂θᵀ from the implicit function theorem: `hess_j X = -cross_theta`.
pub fn dpsi_dtheta(sol: &InnerSolution) -> Result<DMatrix<f64>> {
    let factor = sol.neg_hess_factor()?;
    // hess_j X = -C  <=>  (-hess_j) X = C
    Ok(factor.solve_mat(&sol.cross_theta))
}
