//! Conditional inference for random effects.
//!
//! Notation, all evaluated at `(Ψ̂(θ̂), θ̂)`:
//!
//! * `H = l̈_j`, `R = l̈_r`, `C = l̈_c = H - R` (Ψ-Hessians),
//! * `B = I - H⁻¹R`, the shrinkage matrix, so that `E{Ψ̂ | Ψ} ≈ BΨ + H⁻¹R E{Ψ}`,
//! * `S = ∂Ψ̂/∂θᵀ`, `Σ = Cov(θ̂)`, `J = ∂E{Ψ}/∂θᵀ`, `Υ = S - H⁻¹R J`,
//! * `K₀ = -H⁻¹ + H⁻¹RH⁻¹`, the conditional covariance of Ψ̂ for known θ.
//!
//! Estimators:
//!
//! * posterior mode `Ψ̂`, with the marginal MSE `-H⁻¹ + SΣSᵀ` or the
//!   conditional covariance `K₀ + SΣSᵀ`;
//! * bias-corrected `Ψ̂_BC = B⁻¹[Ψ̂ - H⁻¹R E{Ψ}]` with
//!   `MSE = B⁻¹[K₀ + ΥΣΥᵀ]B⁻ᵀ`;
//! * SVD-mixed `Ψ̂_SD`, which applies the correction only along the singular
//!   directions of `B = UΓVᵀ` whose singular values exceed `γ_c` and keeps
//!   the posterior mode (with marginal MSE) along the rest.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::laplace::{dpsi_dtheta, InnerSolution};
use crate::linalg::{clamp_psd, numerical_rank, symmetrize, SpdFactor};
use crate::model_core::{JointModel, PriorMean};
use crate::normal::two_sided_z;
use crate::outer::OuterFit;

/// `B` counts as singular when `σ_min / σ_max` is at or below this.
pub const SINGULAR_B_REL: f64 = 1e-8;
/// Relative threshold for nonzero singular values of `l̈_c`.
pub const HESS_C_RANK_REL: f64 = 1e-10;

/// How the singular-value cutoff γ_c is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GammaPolicy {
    /// Midpoint between the `n_c`-th and `(n_c+1)`-th singular values of `B`,
    /// with `n_c` the rank of `l̈_c`.
    #[default]
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    PosteriorMode,
    BiasCorrected,
    SvdMixed,
}

/// SVD of the shrinkage matrix with its cutoff.
#[derive(Debug, Clone)]
pub struct ShrinkageDecomposition {
    pub b: DMatrix<f64>,
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    /// Descending.
    pub singular_values: DVector<f64>,
    pub gamma_c: f64,
    /// Number of singular values above `gamma_c`.
    pub n_c: usize,
}

impl ShrinkageDecomposition {
    /// SVD of `b` with singular values sorted in descending order. The cutoff
    /// is left at zero; see [`ShrinkageDecomposition::with_gamma`].
    pub fn new(b: &DMatrix<f64>) -> Result<Self> {
        let p = b.nrows();
        if b.ncols() != p {
            return Err(Error::Contract("shrinkage matrix must be square".into()));
        }
        let svd = b.clone().svd(true, true);
        let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
            return Err(Error::Internal("SVD did not return singular vectors".into()));
        };
        let mut order: Vec<usize> = (0..p).collect();
        order.sort_by(|&i, &j| svd.singular_values[j].partial_cmp(&svd.singular_values[i]).unwrap());
        let singular_values = DVector::from_iterator(p, order.iter().map(|&i| svd.singular_values[i]));
        let u = DMatrix::from_fn(p, p, |r, c| u[(r, order[c])]);
        let v = DMatrix::from_fn(p, p, |r, c| v_t[(order[c], r)]);
        let mut out = Self {
            b: b.clone(),
            u,
            v,
            singular_values,
            gamma_c: 0.0,
            n_c: 0,
        };
        out.set_gamma(0.0);
        Ok(out)
    }

    pub fn with_gamma(mut self, gamma_c: f64) -> Self {
        self.set_gamma(gamma_c);
        self
    }

    fn set_gamma(&mut self, gamma_c: f64) {
        self.gamma_c = gamma_c;
        self.n_c = self.singular_values.iter().filter(|&&s| s > gamma_c).count();
    }

    /// `Γ_g⁻¹`: inverted singular values above γ_c, zero elsewhere.
    pub fn gamma_g_inv(&self) -> DVector<f64> {
        self.singular_values
            .map(|s| if s > self.gamma_c { 1.0 / s } else { 0.0 })
    }

    /// `Γ^c`: indicator of singular values at or below γ_c.
    pub fn gamma_c_indicator(&self) -> DVector<f64> {
        self.singular_values
            .map(|s| if s > self.gamma_c { 0.0 } else { 1.0 })
    }

    /// `(Γ_g⁻¹Uᵀ, Γ^cVᵀ)`.
    fn projections(&self) -> (DMatrix<f64>, DMatrix<f64>) {
        let l1 = DMatrix::from_diagonal(&self.gamma_g_inv()) * self.u.transpose();
        let l2 = DMatrix::from_diagonal(&self.gamma_c_indicator()) * self.v.transpose();
        (l1, l2)
    }
}

/// A 2×2 block MSE matrix for (Ψ estimator, θ̂).
#[derive(Debug, Clone, PartialEq)]
pub struct JointMse {
    pub psi_block: DMatrix<f64>,
    /// dim Ψ × dim θ.
    pub cross_block: DMatrix<f64>,
    pub theta_block: DMatrix<f64>,
}

impl JointMse {
    pub fn full(&self) -> DMatrix<f64> {
        let p = self.psi_block.nrows();
        let q = self.theta_block.nrows();
        let mut m = DMatrix::zeros(p + q, p + q);
        m.view_mut((0, 0), (p, p)).copy_from(&self.psi_block);
        m.view_mut((0, p), (p, q)).copy_from(&self.cross_block);
        m.view_mut((p, 0), (q, p)).copy_from(&self.cross_block.transpose());
        m.view_mut((p, p), (q, q)).copy_from(&self.theta_block);
        m
    }
}

/// One estimator of Ψ with its MSE and Wald intervals.
#[derive(Debug, Clone)]
pub struct ConditionalEstimate {
    pub kind: EstimatorKind,
    pub psi_est: DVector<f64>,
    pub mse: DMatrix<f64>,
    pub theta_block: DMatrix<f64>,
    pub cross_block: DMatrix<f64>,
    pub alpha: f64,
    pub ci_lower: DVector<f64>,
    pub ci_upper: DVector<f64>,
}

impl ConditionalEstimate {
    fn build(kind: EstimatorKind, psi_est: DVector<f64>, joint: JointMse, alpha: f64) -> Result<Self> {
        let (ci_lower, ci_upper) = wald_ci(&psi_est, &joint.psi_block, alpha)?;
        Ok(Self {
            kind,
            psi_est,
            mse: joint.psi_block,
            theta_block: joint.theta_block,
            cross_block: joint.cross_block,
            alpha,
            ci_lower,
            ci_upper,
        })
    }

    pub fn joint(&self) -> JointMse {
        JointMse {
            psi_block: self.mse.clone(),
            cross_block: self.cross_block.clone(),
            theta_block: self.theta_block.clone(),
        }
    }
}

/// Everything the estimators share, computed once per fit.
#[derive(Debug, Clone)]
pub struct ConditionalFit {
    pub psi_hat: DVector<f64>,
    pub hess_c: DMatrix<f64>,
    /// `-H⁻¹`.
    pub neg_hess_inv: DMatrix<f64>,
    /// `H⁻¹R`.
    pub hinv_r: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub prior: PriorMean,
    pub sens: DMatrix<f64>,
    pub upsilon: DMatrix<f64>,
    pub cov_theta: DMatrix<f64>,
}

impl ConditionalFit {
    pub fn new(sol: &InnerSolution, prior: PriorMean, sens: DMatrix<f64>, cov_theta: DMatrix<f64>) -> Result<Self> {
        let p = sol.psi_dim();
        let q = cov_theta.nrows();
        if prior.mean.len() != p || prior.jacobian_theta.shape() != (p, q) || sens.shape() != (p, q) {
            return Err(Error::Contract(format!(
                "inconsistent shapes: dim psi {p}, prior {:?}/{:?}, sensitivity {:?}, cov theta {:?}",
                prior.mean.len(),
                prior.jacobian_theta.shape(),
                sens.shape(),
                cov_theta.shape()
            )));
        }
        let factor = sol.neg_hess_factor()?;
        let neg_hess_inv = symmetrize(&factor.solve_mat(&DMatrix::identity(p, p)));
        // H⁻¹R = -(-H)⁻¹R
        let hinv_r = -factor.solve_mat(&sol.hess_r);
        let b = DMatrix::identity(p, p) - &hinv_r;
        let upsilon = &sens - &hinv_r * &prior.jacobian_theta;
        Ok(Self {
            psi_hat: sol.psi_hat.values.clone(),
            hess_c: sol.hess_c(),
            neg_hess_inv,
            hinv_r,
            b,
            prior,
            sens,
            upsilon,
            cov_theta,
        })
    }

    /// Assemble from an outer fit: prior mean and sensitivity at θ̂.
    pub fn from_outer(model: &dyn JointModel, fit: &OuterFit) -> Result<Self> {
        let prior = model.prior(&fit.theta_hat.as_dvector())?;
        let sens = dpsi_dtheta(&fit.inner)?;
        Self::new(&fit.inner, prior, sens, fit.cov_theta.clone())
    }

    pub fn psi_dim(&self) -> usize {
        self.psi_hat.len()
    }

    /// `max |∂Ψ̂/∂θᵀ|`, a diagnostic for the size of the neglected bias term.
    pub fn max_sensitivity(&self) -> f64 {
        if self.sens.is_empty() {
            0.0
        } else {
            self.sens.amax()
        }
    }

    /// `K₀ = -H⁻¹ + H⁻¹RH⁻¹`.
    pub fn known_theta_cov(&self) -> DMatrix<f64> {
        // H⁻¹RH⁻¹ = (H⁻¹R)(H⁻¹) = -(H⁻¹R)(-H⁻¹)
        symmetrize(&(&self.neg_hess_inv - &self.hinv_r * &self.neg_hess_inv))
    }

    fn sandwich(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        a * &self.cov_theta * a.transpose()
    }

    /// Marginal (empirical-Bayes) MSE of `(Ψ̂, θ̂)`.
    pub fn marginal_mse(&self) -> JointMse {
        let psi_block = clamp_psd(&(&self.neg_hess_inv + self.sandwich(&self.sens))).0;
        JointMse {
            psi_block,
            cross_block: &self.sens * &self.cov_theta,
            theta_block: self.cov_theta.clone(),
        }
    }

    /// Conditional covariance of the posterior mode, ignoring its bias.
    pub fn mode_conditional_mse(&self) -> JointMse {
        let psi_block = clamp_psd(&(self.known_theta_cov() + self.sandwich(&self.sens))).0;
        JointMse {
            psi_block,
            cross_block: &self.sens * &self.cov_theta,
            theta_block: self.cov_theta.clone(),
        }
    }

    fn check_b(&self) -> Result<()> {
        let sv = self.b.clone().singular_values();
        if sv.is_empty() {
            return Ok(());
        }
        let ratio = sv.min() / sv.max();
        if !(ratio > SINGULAR_B_REL) {
            return Err(Error::SingularShrinkage { ratio: if ratio.is_nan() { 0.0 } else { ratio } });
        }
        Ok(())
    }

    fn b_inverse(&self) -> Result<DMatrix<f64>> {
        self.check_b()?;
        self.b
            .clone()
            .try_inverse()
            .ok_or(Error::SingularShrinkage { ratio: 0.0 })
    }

    /// `Ψ̂ - H⁻¹R E{Ψ}`.
    fn centered_mode(&self) -> DVector<f64> {
        &self.psi_hat - &self.hinv_r * &self.prior.mean
    }

    pub fn bias_correct(&self) -> Result<DVector<f64>> {
        self.check_b()?;
        self.b
            .clone()
            .lu()
            .solve(&self.centered_mode())
            .ok_or(Error::SingularShrinkage { ratio: 0.0 })
    }

    pub fn mse_bc(&self) -> Result<DMatrix<f64>> {
        let b_inv = self.b_inverse()?;
        let inner = self.known_theta_cov() + self.sandwich(&self.upsilon);
        Ok(clamp_psd(&(&b_inv * inner * b_inv.transpose())).0)
    }

    /// Joint MSE of `(Ψ̂_BC, θ̂)`; the cross block is `B⁻¹Υ Σ`.
    pub fn joint_mse_bc(&self) -> Result<JointMse> {
        let b_inv = self.b_inverse()?;
        Ok(JointMse {
            psi_block: self.mse_bc()?,
            cross_block: &b_inv * &self.upsilon * &self.cov_theta,
            theta_block: self.cov_theta.clone(),
        })
    }

    /// SVD of `B` with γ_c chosen by `policy`.
    pub fn decompose(&self, policy: GammaPolicy) -> Result<ShrinkageDecomposition> {
        let d = ShrinkageDecomposition::new(&self.b)?;
        let (gamma_c, _) = select_gamma_c_from(&self.hess_c, &d, policy);
        Ok(d.with_gamma(gamma_c))
    }

    pub fn svd_estimate(&self, d: &ShrinkageDecomposition) -> DVector<f64> {
        let (l1, l2) = d.projections();
        &d.v * (l1 * self.centered_mode() + l2 * &self.psi_hat)
    }

    pub fn mse_sd(&self, d: &ShrinkageDecomposition) -> DMatrix<f64> {
        let (l1, l2) = d.projections();
        let k0 = self.known_theta_cov();
        let cov11 = &k0 + self.sandwich(&self.upsilon);
        let cov12 = &k0 + &self.upsilon * &self.cov_theta * self.sens.transpose();
        let marginal = self.marginal_mse().psi_block;
        let a = &l1 * &cov11 * l1.transpose();
        let b = &l1 * &cov12 * l2.transpose();
        let c = &l2 * &marginal * l2.transpose();
        let inner = &a + &b + b.transpose() + c;
        clamp_psd(&(&d.v * inner * d.v.transpose())).0
    }

    /// `G = V[(Γ_g⁻¹Uᵀ + Γ^cVᵀ)S - Γ_g⁻¹UᵀH⁻¹R J]`.
    pub fn g_matrix(&self, d: &ShrinkageDecomposition) -> DMatrix<f64> {
        let (l1, l2) = d.projections();
        &d.v * (l1 * &self.upsilon + l2 * &self.sens)
    }

    pub fn joint_mse_sd(&self, d: &ShrinkageDecomposition) -> JointMse {
        JointMse {
            psi_block: self.mse_sd(d),
            cross_block: self.g_matrix(d) * &self.cov_theta,
            theta_block: self.cov_theta.clone(),
        }
    }

    /// Posterior mode with the marginal MSE.
    pub fn mode_marginal(&self, alpha: f64) -> Result<ConditionalEstimate> {
        ConditionalEstimate::build(EstimatorKind::PosteriorMode, self.psi_hat.clone(), self.marginal_mse(), alpha)
    }

    /// Posterior mode with its conditional covariance (bias ignored).
    pub fn mode_conditional(&self, alpha: f64) -> Result<ConditionalEstimate> {
        ConditionalEstimate::build(
            EstimatorKind::PosteriorMode,
            self.psi_hat.clone(),
            self.mode_conditional_mse(),
            alpha,
        )
    }

    pub fn bias_corrected(&self, alpha: f64) -> Result<ConditionalEstimate> {
        ConditionalEstimate::build(EstimatorKind::BiasCorrected, self.bias_correct()?, self.joint_mse_bc()?, alpha)
    }

    pub fn svd_mixed(&self, policy: GammaPolicy, alpha: f64) -> Result<ConditionalEstimate> {
        let d = self.decompose(policy)?;
        ConditionalEstimate::build(EstimatorKind::SvdMixed, self.svd_estimate(&d), self.joint_mse_sd(&d), alpha)
    }
}

/// `B = I - l̈_j⁻¹ l̈_r`.
pub fn shrinkage_matrix(sol: &InnerSolution) -> Result<DMatrix<f64>> {
    let p = sol.psi_dim();
    let factor = sol.neg_hess_factor()?;
    Ok(DMatrix::identity(p, p) + factor.solve_mat(&sol.hess_r))
}

fn known_theta(sol: &InnerSolution, prior: &PriorMean) -> Result<ConditionalFit> {
    let q = prior.jacobian_theta.ncols();
    let p = sol.psi_dim();
    ConditionalFit::new(sol, prior.clone(), DMatrix::zeros(p, q), DMatrix::zeros(q, q))
}

/// `Ψ̂_BC = B⁻¹[Ψ̂ - l̈_j⁻¹ l̈_r E{Ψ}]`.
pub fn bias_correct(sol: &InnerSolution, prior: &PriorMean) -> Result<DVector<f64>> {
    known_theta(sol, prior)?.bias_correct()
}

/// Conditional MSE of `Ψ̂_BC`.
pub fn mse_bc(sol: &InnerSolution, prior: &PriorMean, sens: &DMatrix<f64>, cov_theta: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    ConditionalFit::new(sol, prior.clone(), sens.clone(), cov_theta.clone())?.mse_bc()
}

/// Marginal MSE of `(Ψ̂, θ̂)`.
pub fn marginal_mse(sol: &InnerSolution, sens: &DMatrix<f64>, cov_theta: &DMatrix<f64>) -> Result<JointMse> {
    let q = cov_theta.nrows();
    let prior = PriorMean::zero(sol.psi_dim(), q);
    Ok(ConditionalFit::new(sol, prior, sens.clone(), cov_theta.clone())?.marginal_mse())
}

fn select_gamma_c_from(hess_c: &DMatrix<f64>, d: &ShrinkageDecomposition, policy: GammaPolicy) -> (f64, usize) {
    let sv = &d.singular_values;
    let p = sv.len();
    match policy {
        GammaPolicy::Fixed(g) => (g, sv.iter().filter(|&&s| s > g).count()),
        GammaPolicy::Auto => {
            let n_c = numerical_rank(hess_c, HESS_C_RANK_REL);
            let gamma = if n_c >= p {
                0.0
            } else if n_c == 0 {
                // every direction is unsupported
                sv.max() + 1.0
            } else {
                0.5 * (sv[n_c - 1] + sv[n_c])
            };
            (gamma, n_c)
        }
    }
}

/// γ_c and n_c. With [`GammaPolicy::Auto`], `n_c` is the number of nonzero
/// singular values of `l̈_c` and γ_c sits midway between the `n_c`-th and
/// `(n_c+1)`-th singular values of `B`.
pub fn select_gamma_c(sol: &InnerSolution, d: &ShrinkageDecomposition, policy: GammaPolicy) -> (f64, usize) {
    select_gamma_c_from(&sol.hess_c(), d, policy)
}

/// `Ψ̂_SD` for known θ.
pub fn svd_estimate(sol: &InnerSolution, prior: &PriorMean, d: &ShrinkageDecomposition) -> Result<DVector<f64>> {
    Ok(known_theta(sol, prior)?.svd_estimate(d))
}

pub fn mse_sd(
    sol: &InnerSolution,
    prior: &PriorMean,
    sens: &DMatrix<f64>,
    cov_theta: &DMatrix<f64>,
    d: &ShrinkageDecomposition,
) -> Result<DMatrix<f64>> {
    Ok(ConditionalFit::new(sol, prior.clone(), sens.clone(), cov_theta.clone())?.mse_sd(d))
}

pub fn joint_mse_sd(
    sol: &InnerSolution,
    prior: &PriorMean,
    sens: &DMatrix<f64>,
    cov_theta: &DMatrix<f64>,
    d: &ShrinkageDecomposition,
) -> Result<JointMse> {
    Ok(ConditionalFit::new(sol, prior.clone(), sens.clone(), cov_theta.clone())?.joint_mse_sd(d))
}

/// `est_i ± z_{α/2} √mse_ii`.
pub fn wald_ci(est: &DVector<f64>, mse: &DMatrix<f64>, alpha: f64) -> Result<(DVector<f64>, DVector<f64>)> {
    if mse.shape() != (est.len(), est.len()) {
        return Err(Error::Contract(format!(
            "estimate has {} components but the MSE is {:?}",
            est.len(),
            mse.shape()
        )));
    }
    let z = two_sided_z(alpha)?;
    let mut lower = est.clone();
    let mut upper = est.clone();
    for i in 0..est.len() {
        let v = mse[(i, i)];
        if !(v >= 0.0) {
            return Err(Error::Internal(format!("negative MSE diagonal {v:e} at component {i}")));
        }
        let half = z * v.sqrt();
        lower[i] -= half;
        upper[i] += half;
    }
    Ok((lower, upper))
}

/// A vector-valued map with a Jacobian.
pub trait DifferentiableMap {
    fn value(&self, x: &DVector<f64>) -> DVector<f64>;
    fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64>;
}

/// `x ↦ A x + b`.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub matrix: DMatrix<f64>,
    pub offset: DVector<f64>,
}

impl DifferentiableMap for AffineMap {
    fn value(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x + &self.offset
    }

    fn jacobian(&self, _x: &DVector<f64>) -> DMatrix<f64> {
        self.matrix.clone()
    }
}

/// Mean, covariance and Wald intervals of `g(x)` by the delta method.
#[derive(Debug, Clone)]
pub struct DeltaEstimate {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub ci_lower: DVector<f64>,
    pub ci_upper: DVector<f64>,
}

pub fn delta_method(g: &dyn DifferentiableMap, est: &DVector<f64>, mse: &DMatrix<f64>, alpha: f64) -> Result<DeltaEstimate> {
    let jac = g.jacobian(est);
    if jac.ncols() != est.len() {
        return Err(Error::Contract(format!(
            "Jacobian has {} columns for an estimate of length {}",
            jac.ncols(),
            est.len()
        )));
    }
    if jac.iter().any(|v| !v.is_finite()) {
        return Err(Error::domain("jacobian", "non-finite Jacobian at the estimate"));
    }
    let mean = g.value(est);
    let cov = clamp_psd(&(&jac * mse * jac.transpose())).0;
    let (ci_lower, ci_upper) = wald_ci(&mean, &cov, alpha)?;
    Ok(DeltaEstimate {
        mean,
        cov,
        ci_lower,
        ci_upper,
    })
}

/// `Ψ̂_B = -Λ_B⁻¹ Λ_BA Ψ̂_A` for the components `unobserved` of a Gaussian
/// prior with precision `precision`.
pub fn predict_unobserved(precision: &DMatrix<f64>, unobserved: &[usize], psi_a_hat: &DVector<f64>) -> Result<DVector<f64>> {
    let p = precision.nrows();
    if precision.ncols() != p {
        return Err(Error::Contract("precision matrix must be square".into()));
    }
    let mut in_b = vec![false; p];
    for &i in unobserved {
        if i >= p || in_b[i] {
            return Err(Error::Contract(format!("invalid or repeated unobserved index {i}")));
        }
        in_b[i] = true;
    }
    let a: Vec<usize> = (0..p).filter(|&i| !in_b[i]).collect();
    let b: Vec<usize> = unobserved.to_vec();
    if psi_a_hat.len() != a.len() {
        return Err(Error::Contract(format!(
            "{} observed components but psi_a has length {}",
            a.len(),
            psi_a_hat.len()
        )));
    }
    let lam_b = DMatrix::from_fn(b.len(), b.len(), |r, c| precision[(b[r], b[c])]);
    let lam_ba = DMatrix::from_fn(b.len(), a.len(), |r, c| precision[(b[r], a[c])]);
    let factor = SpdFactor::new(&lam_b, None).ok_or_else(|| Error::RankDeficient {
        context: "precision block of the unobserved effects is not positive definite".into(),
        direction: crate::linalg::null_direction(&lam_b),
    })?;
    Ok(-factor.solve_vec(&(lam_ba * psi_a_hat)))
}
