//! The joint-model contract: `l_j(Ψ, θ) = l_c + l_r`, where `l_c` is the
//! log-likelihood of the data given the random effects Ψ and `l_r` the
//! log-density of Ψ itself.
//!
//! Concrete models implement [`JointModel`]; every downstream stage (inner
//! mode finding, marginal likelihood, conditional inference) only talks to
//! that trait. Parameters θ live on an unconstrained scale: variance-type
//! components are stored as logarithms and mapped back through
//! [`Transform`].

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

/// Map from the unconstrained optimisation scale to the natural scale.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Identity,
    Exp,
}

impl Transform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Exp => x.exp(),
        }
    }
}

/// Model parameters θ on the unconstrained scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThetaVector {
    pub values: Vec<f64>,
    pub labels: Vec<String>,
    pub transforms: Vec<Transform>,
}

impl ThetaVector {
    pub fn new(values: Vec<f64>, labels: Vec<String>, transforms: Vec<Transform>) -> Result<Self> {
        if labels.len() != values.len() || transforms.len() != values.len() {
            return Err(Error::Contract(format!(
                "theta has {} values, {} labels and {} transforms",
                values.len(),
                labels.len(),
                transforms.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(labels[i].clone(), "non-finite parameter value"));
        }
        Ok(Self {
            values,
            labels,
            transforms,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn as_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.values)
    }

    /// Same labels and transforms, new values.
    pub fn with_values(&self, values: &[f64]) -> Result<Self> {
        Self::new(values.to_vec(), self.labels.clone(), self.transforms.clone())
    }

    /// Values mapped to the natural scale.
    pub fn natural(&self) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.transforms)
            .map(|(v, t)| t.apply(*v))
            .collect()
    }
}

/// Random effects / basis coefficients Ψ.
#[derive(Debug, Clone, PartialEq)]
pub struct PsiVector {
    pub values: DVector<f64>,
}

impl PsiVector {
    pub fn new(values: DVector<f64>) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::domain(format!("psi[{i}]"), "non-finite random effect"));
        }
        Ok(Self { values })
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            values: DVector::zeros(dim),
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }
}

/// Values and Ψ-derivatives of the joint log-likelihood at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEval {
    pub l_c: f64,
    pub l_r: f64,
    /// ∂l_j/∂Ψ.
    pub grad_psi: DVector<f64>,
    /// ∂²l_j/∂Ψ∂Ψᵀ.
    pub hess_j: DMatrix<f64>,
    /// ∂²l_r/∂Ψ∂Ψᵀ.
    pub hess_r: DMatrix<f64>,
    /// ∂²l_j/∂Ψ∂θᵀ, dim Ψ × dim θ.
    pub cross_theta: DMatrix<f64>,
}

impl JointEval {
    pub fn l_j(&self) -> f64 {
        self.l_c + self.l_r
    }

    /// `hess_j - hess_r`.
    pub fn hess_c(&self) -> DMatrix<f64> {
        &self.hess_j - &self.hess_r
    }
}

/// Prior mean E{Ψ}(θ) and its θ-Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorMean {
    pub mean: DVector<f64>,
    pub jacobian_theta: DMatrix<f64>,
}

impl PriorMean {
    pub fn zero(psi_dim: usize, theta_dim: usize) -> Self {
        Self {
            mean: DVector::zeros(psi_dim),
            jacobian_theta: DMatrix::zeros(psi_dim, theta_dim),
        }
    }
}

/// A joint model `l_j = l_c + l_r` with analytic Ψ-derivatives.
///
/// Implementations must be deterministic and free of side effects so that
/// a single instance can be evaluated from many threads.
pub trait JointModel: Send + Sync {
    fn psi_dim(&self) -> usize;
    fn theta_dim(&self) -> usize;

    /// Labels and transforms for θ, in order.
    fn theta_template(&self) -> (Vec<String>, Vec<Transform>);

    fn eval(&self, psi: &DVector<f64>, theta: &DVector<f64>) -> Result<JointEval>;

    /// `(l_c, l_r)` only. Used by line searches.
    fn log_densities(&self, psi: &DVector<f64>, theta: &DVector<f64>) -> Result<(f64, f64)> {
        let e = self.eval(psi, theta)?;
        Ok((e.l_c, e.l_r))
    }

    /// Ψ-Hessian of `l_c` computed on its own, independent of `hess_j`.
    fn conditional_hessian(&self, psi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>>;

    fn prior(&self, theta: &DVector<f64>) -> Result<PriorMean>;

    fn obs_units(&self) -> usize;

    fn unit_has_data(&self) -> Vec<bool>;

    /// Half-bandwidth of `hess_j`, if it is banded.
    fn bandwidth(&self) -> Option<usize> {
        None
    }

    /// Ratios of prior to observation variance on the natural scale.
    fn variance_ratios(&self, _theta: &DVector<f64>) -> Vec<f64> {
        Vec::new()
    }

    /// Components of θ treated as known when computing Cov(θ̂).
    fn fixed_in_covariance(&self) -> Vec<bool> {
        vec![false; self.theta_dim()]
    }

    fn theta_vector(&self, values: &[f64]) -> Result<ThetaVector> {
        let (labels, transforms) = self.theta_template();
        ThetaVector::new(values.to_vec(), labels, transforms)
    }
}

/// Evaluate the joint log-likelihood with dimension checks.
pub fn eval_joint(model: &dyn JointModel, psi: &PsiVector, theta: &ThetaVector) -> Result<JointEval> {
    check_dims(model, psi.dim(), theta.len())?;
    model.eval(&psi.values, &theta.as_dvector())
}

pub(crate) fn check_dims(model: &dyn JointModel, psi_dim: usize, theta_dim: usize) -> Result<()> {
    if psi_dim != model.psi_dim() || theta_dim != model.theta_dim() {
        return Err(Error::Contract(format!(
            "model expects (dim psi, dim theta) = ({}, {}), got ({psi_dim}, {theta_dim})",
            model.psi_dim(),
            model.theta_dim()
        )));
    }
    Ok(())
}

/// Default central-difference step: `cbrt(eps) * max(1, |x|)`.
pub fn gradient_step(x: f64) -> f64 {
    f64::EPSILON.cbrt() * x.abs().max(1.0)
}

/// Default second-difference step: `eps^(1/4) * max(1, |x|)`.
pub fn hessian_step(x: f64) -> f64 {
    f64::EPSILON.powf(0.25) * x.abs().max(1.0)
}

fn probe<F>(f: &F, x: &DVector<f64>) -> Result<f64>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let v = f(x)?;
    if !v.is_finite() {
        return Err(Error::domain(
            format!("{:?}", x.as_slice()),
            "function is not finite at a finite-difference probe point",
        ));
    }
    Ok(v)
}

/// Central-difference gradient with steps `cbrt(eps) * max(1, |x_i|)`.
pub fn fd_gradient<F>(f: F, x: &DVector<f64>) -> Result<DVector<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let mut g = DVector::zeros(x.len());
    let mut xp = x.clone();
    for i in 0..x.len() {
        let h = gradient_step(x[i]);
        xp[i] = x[i] + h;
        let fp = probe(&f, &xp)?;
        xp[i] = x[i] - h;
        let fm = probe(&f, &xp)?;
        xp[i] = x[i];
        g[i] = (fp - fm) / (2.0 * h);
    }
    Ok(g)
}

/// Central-difference Hessian with the default steps, symmetrized.
pub fn fd_hessian<F>(f: F, x: &DVector<f64>) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let steps: Vec<f64> = x.iter().map(|&v| hessian_step(v)).collect();
    fd_hessian_with_steps(f, x, &steps)
}

/// Central-difference Hessian with explicit per-coordinate steps.
pub fn fd_hessian_with_steps<F>(f: F, x: &DVector<f64>, steps: &[f64]) -> Result<DMatrix<f64>>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let n = x.len();
    let f0 = probe(&f, x)?;
    let mut h = DMatrix::zeros(n, n);
    let mut xp = x.clone();
    for i in 0..n {
        let hi = steps[i];
        xp[i] = x[i] + hi;
        let fp = probe(&f, &xp)?;
        xp[i] = x[i] - hi;
        let fm = probe(&f, &xp)?;
        xp[i] = x[i];
        h[(i, i)] = (fp - 2.0 * f0 + fm) / (hi * hi);
        for j in 0..i {
            let hj = steps[j];
            let mut corner = |si: f64, sj: f64| -> Result<f64> {
                xp[i] = x[i] + si * hi;
                xp[j] = x[j] + sj * hj;
                let v = probe(&f, &xp);
                xp[i] = x[i];
                xp[j] = x[j];
                v
            };
            let fpp = corner(1.0, 1.0)?;
            let fpm = corner(1.0, -1.0)?;
            let fmp = corner(-1.0, 1.0)?;
            let fmm = corner(-1.0, -1.0)?;
            let v = (fpp - fpm - fmp + fmm) / (4.0 * hi * hj);
            h[(i, j)] = v;
            h[(j, i)] = v;
        }
    }
    Ok(symmetrize(&h))
}

/// ∂(∂l_j/∂Ψ)/∂θᵀ by central differences of the analytic Ψ-gradient.
pub fn fd_cross_theta(model: &dyn JointModel, psi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
    let mut out = DMatrix::zeros(psi.len(), theta.len());
    let mut tp = theta.clone();
    for k in 0..theta.len() {
        let h = gradient_step(theta[k]);
        tp[k] = theta[k] + h;
        let gp = model.eval(psi, &tp)?.grad_psi;
        tp[k] = theta[k] - h;
        let gm = model.eval(psi, &tp)?.grad_psi;
        tp[k] = theta[k];
        out.set_column(k, &((gp - gm) / (2.0 * h)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theta_vector_rejects_mismatched_labels() {
        let err = ThetaVector::new(vec![0.0, 1.0], vec!["a".into()], vec![Transform::Exp; 2]);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn theta_vector_rejects_nan() {
        let err = ThetaVector::new(vec![f64::NAN], vec!["log_sigma".into()], vec![Transform::Exp]);
        match err {
            Err(Error::Domain { param, .. }) => assert_eq!(param, "log_sigma"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn natural_scale_applies_transforms() {
        let t = ThetaVector::new(
            vec![0.5, 2.0f64.ln()],
            vec!["mu".into(), "log_s".into()],
            vec![Transform::Identity, Transform::Exp],
        )
        .unwrap();
        let nat = t.natural();
        assert_eq!(nat[0], 0.5);
        assert!((nat[1] - 2.0).abs() < 1e-15);
    }

    #[test]
    fn fd_gradient_of_square() {
        let g = fd_gradient(|x| Ok(x[0] * x[0]), &DVector::from_vec(vec![3.0])).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-6);
    }

    #[test]
    fn fd_gradient_of_constant_is_zero() {
        let g = fd_gradient(|_| Ok(4.2), &DVector::from_vec(vec![1.0, -7.0, 1e3])).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fd_hessian_of_sum_of_squares() {
        let h = fd_hessian(|x| Ok(x[0] * x[0] + x[1] * x[1]), &DVector::from_vec(vec![0.3, -1.2])).unwrap();
        assert!((h - DMatrix::identity(2, 2) * 2.0).amax() < 1e-4);
    }

    #[test]
    fn fd_hessian_of_product() {
        let h = fd_hessian(|x| Ok(x[0] * x[1]), &DVector::from_vec(vec![0.7, 2.0])).unwrap();
        assert!((h[(0, 1)] - 1.0).abs() < 1e-4);
        assert!((h[(1, 0)] - 1.0).abs() < 1e-4);
        assert!(h[(0, 0)].abs() < 1e-4);
    }

    #[test]
    fn fd_reports_non_finite_probe() {
        let err = fd_gradient(|x| Ok(x[0].ln()), &DVector::from_vec(vec![0.0]));
        assert!(matches!(err, Err(Error::Domain { .. })));
    }
}
