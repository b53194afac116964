//! Gaussian random-walk state-space model.
//!
//! `Ψ_1 ~ N(0, σ_Ψ²)`, `Ψ_t | Ψ_{t-1} ~ N(Ψ_{t-1}, σ_Ψ²)` and
//! `Y_{t,i} | Ψ_t ~ N(Ψ_t, σ_ε²)` for `i = 1..n`, with any subset of the
//! `T × n` cells allowed to be missing. θ = (log σ_Ψ, log σ_ε).

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::model_core::{JointEval, JointModel, PriorMean, PsiVector, Transform};

/// Observations of a random walk: `y[(t, i)]` with a per-cell observed flag.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomWalkData {
    pub y: DMatrix<f64>,
    /// Same shape as `y`; `false` marks a missing cell.
    pub observed: DMatrix<bool>,
    pub sigma_psi0: Option<f64>,
    pub sigma_eps0: Option<f64>,
}

impl RandomWalkData {
    pub fn new(y: DMatrix<f64>, observed: DMatrix<bool>) -> Result<Self> {
        if y.shape() != observed.shape() {
            return Err(Error::Contract(format!(
                "observations are {:?} but the missing-data mask is {:?}",
                y.shape(),
                observed.shape()
            )));
        }
        if y.nrows() < 2 {
            return Err(Error::domain("T", "a random walk needs at least 2 time steps"));
        }
        if y.ncols() < 1 {
            return Err(Error::domain("n", "at least one observation per time step is required"));
        }
        let mut any = false;
        for (v, &o) in y.iter().zip(observed.iter()) {
            if o {
                any = true;
                if !v.is_finite() {
                    return Err(Error::domain("y", "non-finite observation"));
                }
            }
        }
        if !any {
            return Err(Error::domain("y", "every observation is missing"));
        }
        Ok(Self {
            y,
            observed,
            sigma_psi0: None,
            sigma_eps0: None,
        })
    }

    /// Fully observed data.
    pub fn complete(y: DMatrix<f64>) -> Result<Self> {
        let observed = DMatrix::from_element(y.nrows(), y.ncols(), true);
        Self::new(y, observed)
    }

    pub fn time_steps(&self) -> usize {
        self.y.nrows()
    }

    pub fn per_step(&self) -> usize {
        self.y.ncols()
    }

    /// Number of observed cells at each time step.
    pub fn counts(&self) -> Vec<usize> {
        (0..self.time_steps())
            .map(|t| self.observed.row(t).iter().filter(|&&o| o).count())
            .collect()
    }
}

/// Draw a random-walk path of length `t`.
pub fn simulate_rw_truth<R: Rng + ?Sized>(t: usize, sigma_psi: f64, rng: &mut R) -> Result<PsiVector> {
    if t < 2 {
        return Err(Error::domain("T", "a random walk needs at least 2 time steps"));
    }
    if !(sigma_psi > 0.0) || !sigma_psi.is_finite() {
        return Err(Error::domain("sigma_psi", format!("must be positive and finite, got {sigma_psi}")));
    }
    let mut psi = DVector::zeros(t);
    let mut level = 0.0;
    for v in psi.iter_mut() {
        let z: f64 = rng.sample(StandardNormal);
        level += sigma_psi * z;
        *v = level;
    }
    PsiVector::new(psi)
}

/// Simulate `n` observations per time step around `psi`.
///
/// `missing[t] == true` flags every cell at time `t` as missing. All cells are
/// drawn regardless, so the random stream does not depend on the mask.
pub fn simulate_rw_data<R: Rng + ?Sized>(
    psi: &PsiVector,
    n: usize,
    sigma_eps: f64,
    missing: &[bool],
    rng: &mut R,
) -> Result<RandomWalkData> {
    let t = psi.dim();
    if n < 1 {
        return Err(Error::domain("n", "at least one observation per time step is required"));
    }
    if !(sigma_eps > 0.0) || !sigma_eps.is_finite() {
        return Err(Error::domain("sigma_eps", format!("must be positive and finite, got {sigma_eps}")));
    }
    if missing.len() != t {
        return Err(Error::Contract(format!("mask has length {} but T = {t}", missing.len())));
    }
    let mut y = DMatrix::zeros(t, n);
    for s in 0..t {
        for i in 0..n {
            let z: f64 = rng.sample(StandardNormal);
            y[(s, i)] = psi.values[s] + sigma_eps * z;
        }
    }
    let observed = DMatrix::from_fn(t, n, |s, _| !missing[s]);
    RandomWalkData::new(y, observed)
}

/// The random-walk joint model built from [`RandomWalkData`].
#[derive(Debug, Clone)]
pub struct RandomWalkModel {
    counts: Vec<f64>,
    means: Vec<f64>,
    /// Within-step sums of squares about the step mean.
    ssw: Vec<f64>,
    n_obs: f64,
}

pub fn build_rw_model(data: &RandomWalkData) -> RandomWalkModel {
    let t = data.time_steps();
    let mut counts = vec![0.0; t];
    let mut means = vec![0.0; t];
    let mut ssw = vec![0.0; t];
    for s in 0..t {
        let vals: Vec<f64> = (0..data.per_step())
            .filter(|&i| data.observed[(s, i)])
            .map(|i| data.y[(s, i)])
            .collect();
        if vals.is_empty() {
            continue;
        }
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        counts[s] = vals.len() as f64;
        means[s] = m;
        ssw[s] = vals.iter().map(|v| (v - m) * (v - m)).sum();
    }
    let n_obs = counts.iter().sum();
    RandomWalkModel {
        counts,
        means,
        ssw,
        n_obs,
    }
}

fn positive_scale(theta: f64, name: &str) -> Result<f64> {
    let s = theta.exp();
    if !(s > 0.0) || !s.is_finite() || !(s * s > 0.0) || !(s * s).is_finite() {
        return Err(Error::domain(name, format!("scale exp({theta}) is not a usable positive variance")));
    }
    Ok(s)
}

impl RandomWalkModel {
    fn scales(&self, theta: &DVector<f64>) -> Result<(f64, f64)> {
        if theta.len() != 2 {
            return Err(Error::Contract(format!("random-walk theta has 2 components, got {}", theta.len())));
        }
        Ok((
            positive_scale(theta[0], "log_sigma_psi")?,
            positive_scale(theta[1], "log_sigma_eps")?,
        ))
    }

    fn check_psi(&self, psi: &DVector<f64>) -> Result<()> {
        if psi.len() != self.counts.len() {
            return Err(Error::Contract(format!(
                "random-walk psi has {} components, got {}",
                self.counts.len(),
                psi.len()
            )));
        }
        Ok(())
    }

    fn values(&self, psi: &DVector<f64>, s_psi: f64, s_eps: f64) -> (f64, f64) {
        let v_eps = s_eps * s_eps;
        let v_psi = s_psi * s_psi;
        let mut sq = 0.0;
        for t in 0..psi.len() {
            if self.counts[t] > 0.0 {
                let d = self.means[t] - psi[t];
                sq += self.ssw[t] + self.counts[t] * d * d;
            }
        }
        let l_c = -0.5 * self.n_obs * (2.0 * PI * v_eps).ln() - sq / (2.0 * v_eps);
        let mut inc = 0.0;
        let mut prev = 0.0;
        for &p in psi.iter() {
            let d = p - prev;
            inc += d * d;
            prev = p;
        }
        let l_r = -0.5 * psi.len() as f64 * (2.0 * PI * v_psi).ln() - inc / (2.0 * v_psi);
        (l_c, l_r)
    }

    /// Moment-based starting values `(log σ_Ψ, log σ_ε)`.
    ///
    /// σ_ε² from the pooled within-step variance; σ_Ψ² from squared
    /// differences of consecutive observed step means, less their
    /// measurement-error share. With one observation per step both variances
    /// start at half the mean squared difference.
    pub fn moment_start(&self) -> [f64; 2] {
        let (ss, df) = self
            .counts
            .iter()
            .zip(&self.ssw)
            .filter(|(c, _)| **c >= 2.0)
            .fold((0.0, 0.0), |(s, d), (c, w)| (s + w, d + c - 1.0));
        let obs: Vec<usize> = (0..self.counts.len()).filter(|&t| self.counts[t] > 0.0).collect();
        let mut raw = 0.0;
        let mut noise = 0.0;
        let mut gaps = 0.0;
        for w in obs.windows(2) {
            let (a, b) = (w[0], w[1]);
            let d = self.means[b] - self.means[a];
            raw += d * d;
            noise += 1.0 / self.counts[a] + 1.0 / self.counts[b];
            gaps += (b - a) as f64;
        }
        let pairs = obs.len().saturating_sub(1).max(1) as f64;
        let (v_psi, v_eps) = if df > 0.0 {
            let v_eps = (ss / df).max(1e-8);
            let v_psi = ((raw - v_eps * noise) / gaps.max(1.0)).max(0.05 * v_eps);
            (v_psi, v_eps)
        } else {
            let v = (raw / pairs / 2.0).max(1e-8);
            (v, v)
        };
        [0.5 * v_psi.ln(), 0.5 * v_eps.ln()]
    }

    /// Random-walk structure matrix `Q = DᵀD` (precision is `Q / σ_Ψ²`).
    pub fn structure_matrix(t: usize) -> DMatrix<f64> {
        DMatrix::from_fn(t, t, |i, j| {
            if i == j {
                if i + 1 == t {
                    1.0
                } else {
                    2.0
                }
            } else if i.abs_diff(j) == 1 {
                -1.0
            } else {
                0.0
            }
        })
    }
}

impl JointModel for RandomWalkModel {
    fn psi_dim(&self) -> usize {
        self.counts.len()
    }

    fn theta_dim(&self) -> usize {
        2
    }

    fn theta_template(&self) -> (Vec<String>, Vec<Transform>) {
        (
            vec!["log_sigma_psi".into(), "log_sigma_eps".into()],
            vec![Transform::Exp, Transform::Exp],
        )
    }

    fn eval(&self, psi: &DVector<f64>, theta: &DVector<f64>) -> Result<JointEval> {
        self.check_psi(psi)?;
        let (s_psi, s_eps) = self.scales(theta)?;
        let t = psi.len();
        let (l_c, l_r) = self.values(psi, s_psi, s_eps);
        let v_psi = s_psi * s_psi;
        let v_eps = s_eps * s_eps;

        let mut grad_c = DVector::zeros(t);
        let mut grad_r = DVector::zeros(t);
        for s in 0..t {
            grad_c[s] = self.counts[s] * (self.means[s] - psi[s]) / v_eps;
            let inc = psi[s] - if s > 0 { psi[s - 1] } else { 0.0 };
            let next = if s + 1 < t { psi[s + 1] - psi[s] } else { 0.0 };
            grad_r[s] = -(inc - next) / v_psi;
        }
        let hess_r = Self::structure_matrix(t) * (-1.0 / v_psi);
        let mut hess_j = hess_r.clone();
        for s in 0..t {
            hess_j[(s, s)] -= self.counts[s] / v_eps;
        }
        let mut cross_theta = DMatrix::zeros(t, 2);
        cross_theta.set_column(0, &(&grad_r * -2.0));
        cross_theta.set_column(1, &(&grad_c * -2.0));
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
        let (s_psi, s_eps) = self.scales(theta)?;
        Ok(self.values(psi, s_psi, s_eps))
    }

    fn conditional_hessian(&self, psi: &DVector<f64>, theta: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_psi(psi)?;
        let (_, s_eps) = self.scales(theta)?;
        let v_eps = s_eps * s_eps;
        Ok(DMatrix::from_diagonal(&DVector::from_iterator(
            self.counts.len(),
            self.counts.iter().map(|c| -c / v_eps),
        )))
    }

    fn prior(&self, _theta: &DVector<f64>) -> Result<PriorMean> {
        Ok(PriorMean::zero(self.psi_dim(), 2))
    }

    fn obs_units(&self) -> usize {
        self.counts.len()
    }

    fn unit_has_data(&self) -> Vec<bool> {
        self.counts.iter().map(|&c| c > 0.0).collect()
    }

    fn bandwidth(&self) -> Option<usize> {
        Some(1)
    }

    fn variance_ratios(&self, theta: &DVector<f64>) -> Vec<f64> {
        vec![(2.0 * (theta[0] - theta[1])).exp()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model_core::{eval_joint, PsiVector, ThetaVector};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn theta(s_psi: f64, s_eps: f64) -> DVector<f64> {
        DVector::from_vec(vec![s_psi.ln(), s_eps.ln()])
    }

    #[test]
    fn two_step_prior_hessian() {
        let data = RandomWalkData::complete(DMatrix::from_row_slice(2, 1, &[0.3, -0.2])).unwrap();
        let m = build_rw_model(&data);
        let s_psi: f64 = 1.7;
        let e = m.eval(&DVector::from_vec(vec![0.1, 0.4]), &theta(s_psi, 0.5)).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 1.0]) * (-1.0 / (s_psi * s_psi));
        assert!((e.hess_r - expected).amax() < 1e-14);
    }

    #[test]
    fn hess_c_entry_fully_observed() {
        let data = RandomWalkData::complete(DMatrix::from_element(4, 5, 0.1)).unwrap();
        let m = build_rw_model(&data);
        let h = m.conditional_hessian(&DVector::zeros(4), &theta(1.0, 0.5)).unwrap();
        assert!((h[(2, 2)] + 20.0).abs() < 1e-12);
    }

    #[test]
    fn l_r_at_zero_path() {
        let data = RandomWalkData::complete(DMatrix::from_element(7, 1, 0.0)).unwrap();
        let m = build_rw_model(&data);
        let s: f64 = 1.3;
        let e = m.eval(&DVector::zeros(7), &theta(s, 0.5)).unwrap();
        let expected = -(7.0 / 2.0) * (2.0 * PI * s * s).ln();
        assert!((e.l_r - expected).abs() < 1e-12);
    }

    #[test]
    fn masked_tail_unit_flags() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let psi = simulate_rw_truth(50, 1.0, &mut rng).unwrap();
        let mut mask = vec![false; 50];
        mask[47..].iter_mut().for_each(|m| *m = true);
        let data = simulate_rw_data(&psi, 5, 0.5, &mask, &mut rng).unwrap();
        let m = build_rw_model(&data);
        let flags = m.unit_has_data();
        assert_eq!(flags.iter().filter(|&&f| f).count(), 47);
        assert!(!flags[47] && !flags[49]);
        assert!(data.observed.row(48).iter().all(|&o| !o));
        let hc = m.conditional_hessian(&psi.values, &theta(1.0, 0.5)).unwrap();
        assert_eq!(hc[(48, 48)], 0.0);
    }

    #[test]
    fn all_masked_rejected() {
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let psi = simulate_rw_truth(4, 1.0, &mut rng).unwrap();
        let err = simulate_rw_data(&psi, 2, 0.5, &[true; 4], &mut rng);
        assert!(matches!(err, Err(Error::Domain { .. })));
    }

    #[test]
    fn same_seed_same_path() {
        let a = simulate_rw_truth(50, 1.0, &mut ChaCha12Rng::seed_from_u64(11)).unwrap();
        let b = simulate_rw_truth(50, 1.0, &mut ChaCha12Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn degenerate_noise_path_is_zero() {
        let p = simulate_rw_truth(2, 1e-12, &mut ChaCha12Rng::seed_from_u64(1)).unwrap();
        assert!(p.values.amax() < 1e-10);
    }

    #[test]
    fn non_positive_sigma_rejected() {
        let err = simulate_rw_truth(5, 0.0, &mut ChaCha12Rng::seed_from_u64(1));
        assert!(matches!(err, Err(Error::Domain { .. })));
    }

    #[test]
    fn tiny_noise_data_equals_truth() {
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let psi = simulate_rw_truth(10, 1.0, &mut rng).unwrap();
        let data = simulate_rw_data(&psi, 1, 1e-14, &[false; 10], &mut rng).unwrap();
        assert!((data.y.column(0) - &psi.values).amax() < 1e-12);
    }

    #[test]
    fn zero_variance_is_a_domain_error() {
        let data = RandomWalkData::complete(DMatrix::from_element(3, 1, 0.0)).unwrap();
        let m = build_rw_model(&data);
        let err = m.eval(&DVector::zeros(3), &DVector::from_vec(vec![0.0, -800.0]));
        match err {
            Err(Error::Domain { param, .. }) => assert_eq!(param, "log_sigma_eps"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dimension_mismatch_is_contract_violation() {
        let data = RandomWalkData::complete(DMatrix::from_element(3, 1, 0.0)).unwrap();
        let m = build_rw_model(&data);
        let th = m.theta_vector(&[0.0, 0.0]).unwrap();
        let err = eval_joint(&m, &PsiVector::zeros(4), &th);
        assert!(matches!(err, Err(Error::Contract(_))));
        let th3 = ThetaVector::new(vec![0.0; 3], vec!["a".into(), "b".into(), "c".into()], vec![Transform::Exp; 3]).unwrap();
        assert!(matches!(eval_joint(&m, &PsiVector::zeros(3), &th3), Err(Error::Contract(_))));
    }
}
