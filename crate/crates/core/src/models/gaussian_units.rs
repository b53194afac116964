//! Independent Gaussian random effects, one per unit, each observed with
//! Gaussian noise: `Ψ_i ~ N(μ, σ_Ψ²)`, `y_ij | Ψ_i ~ N(Ψ_i, σ_ε²)`.
//!
//! With a single unit and a single observation this is the scalar worked
//! example used throughout the tests. Units without observations are allowed
//! and give `hess_c = 0` in their row and column.
//!
//! θ = (log σ_Ψ, log σ_ε), or (μ, log σ_Ψ, log σ_ε) when the prior mean is
//! estimated.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model_core::{JointEval, JointModel, PriorMean, Transform};

#[derive(Debug, Clone)]
pub struct GaussianUnitsModel {
    counts: Vec<f64>,
    means: Vec<f64>,
    ssw: Vec<f64>,
    n_obs: f64,
    estimate_mean: bool,
}

impl GaussianUnitsModel {
    /// `units[i]` holds the observations of unit `i` (possibly none).
    pub fn new(units: &[Vec<f64>]) -> Result<Self> {
        if units.is_empty() {
            return Err(Error::domain("units", "at least one unit is required"));
        }
        let mut counts = Vec::with_capacity(units.len());
        let mut means = Vec::with_capacity(units.len());
        let mut ssw = Vec::with_capacity(units.len());
        for (i, u) in units.iter().enumerate() {
            if u.iter().any(|v| !v.is_finite()) {
                return Err(Error::domain(format!("y[{i}]"), "non-finite observation"));
            }
            let n = u.len() as f64;
            let m = if u.is_empty() { 0.0 } else { u.iter().sum::<f64>() / n };
            counts.push(n);
            means.push(m);
            ssw.push(u.iter().map(|v| (v - m) * (v - m)).sum());
        }
        let n_obs = counts.iter().sum();
        Ok(Self {
            counts,
            means,
            ssw,
            n_obs,
            estimate_mean: false,
        })
    }

    /// Estimate the prior mean μ as the first component of θ.
    pub fn with_prior_mean(mut self) -> Self {
        self.estimate_mean = true;
        self
    }

    fn split(&self, theta: &DVector<f64>) -> Result<(f64, f64, f64)> {
        if theta.len() != self.theta_dim() {
            return Err(Error::Contract(format!(
                "theta has {} components, expected {}",
                theta.len(),
                self.theta_dim()
            )));
        }
        let off = usize::from(self.estimate_mean);
        let mu = if self.estimate_mean { theta[0] } else { 0.0 };
        let v_psi = (2.0 * theta[off]).exp();
        let v_eps = (2.0 * theta[off + 1]).exp();
        if !(v_psi > 0.0) || !v_psi.is_finite() {
            return Err(Error::domain("log_sigma_psi", "variance is zero or infinite"));
        }
        if !(v_eps > 0.0) || !v_eps.is_finite() {
            return Err(Error::domain("log_sigma_eps", "variance is zero or infinite"));
        }
        Ok((mu, v_psi, v_eps))
    }

    fn check_psi(&self, psi: &DVector<f64>) -> Result<()> {
        if psi.len() != self.counts.len() {
            return Err(Error::Contract(format!(
                "psi has {} components, expected {}",
                psi.len(),
                self.counts.len()
            )));
        }
        Ok(())
    }

    fn values(&self, psi: &DVector<f64>, mu: f64, v_psi: f64, v_eps: f64) -> (f64, f64) {
        let mut sq = 0.0;
        let mut pr = 0.0;
        for i in 0..psi.len() {
            if self.counts[i] > 0.0 {
                let d = self.means[i] - psi[i];
                sq += self.ssw[i] + self.counts[i] * d * d;
            }
            let e = psi[i] - mu;
            pr += e * e;
        }
        let l_c = -0.5 * self.n_obs * (2.0 * PI * v_eps).ln() - sq / (2.0 * v_eps);
        let l_r = -0.5 * psi.len() as f64 * (2.0 * PI * v_psi).ln() - pr / (2.0 * v_psi);
        (l_c, l_r)
    }
}

impl JointModel for GaussianUnitsModel {
    fn psi_dim(&self) -> usize {
        self.counts.len()
    }

    fn theta_dim(&self) -> usize {
        2 + usize::from(self.estimate_mean)
    }

    fn theta_template(&self) -> (Vec<String>, Vec<Transform>) {
        let mut labels = vec!["log_sigma_psi".to_string(), "log_sigma_eps".to_string()];
        let mut transforms = vec![Transform::Exp, Transform::Exp];
        if self.estimate_mean {
            labels.insert(0, "mu".into());
            transforms.insert(0, Transform::Identity);
        }
        (labels, transforms)
    }

    fn eval(&self, psi: &DVector<f64>, theta: &DVector<f64>) -> Result<JointEval> {
        self.check_psi(psi)?;
        let (mu, v_psi, v_eps) = self.split(theta)?;
        let (l_c, l_r) = self.values(psi, mu, v_psi, v_eps);
        let m = psi.len();
        let grad_c = DVector::from_fn(m, |i, _| self.counts[i] * (self.means[i] - psi[i]) / v_eps);
        let grad_r = DVector::from_fn(m, |i, _| -(psi[i] - mu) / v_psi);
        let hess_r = DMatrix::identity(m, m) * (-1.0 / v_psi);
        let hess_j = &hess_r - DMatrix::from_diagonal(&DVector::from_fn(m, |i, _| self.counts[i] / v_eps));
        let mut cross_theta = DMatrix::zeros(m, self.theta_dim());
        let off = usize::from(self.estimate_mean);
        if self.estimate_mean {
            cross_theta.set_column(0, &DVector::from_element(m, 1.0 / v_psi));
        }
        cross_theta.set_column(off, &(&grad_r * -2.0));
        cross_theta.set_column(off + 1, &(&grad_c * -2.0));
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
        let (mu, v_psi, v_eps) = self.split(theta)?;
        Ok(self.values(psi, mu, v_psi, v_eps))
    }

    fn conditional_hessian(&self, psi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_psi(psi)?;
        let (_, _, v_eps) = self.split(theta)?;
        Ok(DMatrix::from_diagonal(&DVector::from_fn(self.counts.len(), |i, _| {
            -self.counts[i] / v_eps
        })))
    }

    fn prior(&self, theta: &DVector<f64>) -> Result<PriorMean> {
        let (mu, _, _) = self.split(theta)?;
        let m = self.psi_dim();
        let mut p = PriorMean::zero(m, self.theta_dim());
        if self.estimate_mean {
            p.mean.fill(mu);
            p.jacobian_theta.set_column(0, &DVector::from_element(m, 1.0));
        }
        Ok(p)
    }

    fn obs_units(&self) -> usize {
        self.counts.len()
    }

    fn unit_has_data(&self) -> Vec<bool> {
        self.counts.iter().map(|&c| c > 0.0).collect()
    }

    fn bandwidth(&self) -> Option<usize> {
        Some(0)
    }

    fn variance_ratios(&self, theta: &DVector<f64>) -> Vec<f64> {
        let off = usize::from(self.estimate_mean);
        vec![(2.0 * (theta[off] - theta[off + 1])).exp()]
    }
}
