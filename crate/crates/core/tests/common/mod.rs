//! Independent oracles shared by the integration tests. Nothing here calls
//! into the library's likelihood code.

#![allow(dead_code)]

use std::f64::consts::PI;

use condinf::models::{RandomWalkData, SplineData};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Observed step means, counts and pooled within-step sum of squares.
struct StepSummary {
    idx: Vec<usize>,
    means: Vec<f64>,
    counts: Vec<f64>,
    ssw: f64,
    n_obs: f64,
}

fn summarize(data: &RandomWalkData) -> StepSummary {
    let mut s = StepSummary {
        idx: Vec::new(),
        means: Vec::new(),
        counts: Vec::new(),
        ssw: 0.0,
        n_obs: 0.0,
    };
    for t in 0..data.time_steps() {
        let vals: Vec<f64> = (0..data.per_step())
            .filter(|&i| data.observed[(t, i)])
            .map(|i| data.y[(t, i)])
            .collect();
        if vals.is_empty() {
            continue;
        }
        let n = vals.len() as f64;
        let m = vals.iter().sum::<f64>() / n;
        s.ssw += vals.iter().map(|v| (v - m).powi(2)).sum::<f64>();
        s.n_obs += n;
        s.idx.push(t);
        s.means.push(m);
        s.counts.push(n);
    }
    s
}

/// Covariance of the observed step means: `σ_Ψ² min(s, t) + diag(σ_ε²/n_t)`.
fn step_mean_cov(s: &StepSummary, vp: f64, ve: f64) -> (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
    let k = s.idx.len();
    let walk = DMatrix::from_fn(k, k, |a, b| (s.idx[a].min(s.idx[b]) + 1) as f64);
    let noise = DMatrix::from_fn(k, k, |a, b| if a == b { 1.0 / s.counts[a] } else { 0.0 });
    let cov = &walk * vp + &noise * ve;
    (cov, walk, noise)
}

/// Dense multivariate-normal log-likelihood of random-walk data, including
/// the within-step residual terms.
pub fn dense_rw_loglik(data: &RandomWalkData, s_psi: f64, s_eps: f64) -> f64 {
    let s = summarize(data);
    let (vp, ve) = (s_psi * s_psi, s_eps * s_eps);
    let within: f64 = s
        .counts
        .iter()
        .map(|&n| -(n - 1.0) / 2.0 * (2.0 * PI * ve).ln() - 0.5 * n.ln())
        .sum::<f64>()
        - s.ssw / (2.0 * ve);
    let (cov, _, _) = step_mean_cov(&s, vp, ve);
    let k = s.idx.len();
    let chol = cov.cholesky().expect("covariance is positive definite");
    let y = DVector::from_vec(s.means);
    let sol = chol.solve(&y);
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    within - 0.5 * (k as f64 * (2.0 * PI).ln() + logdet + y.dot(&sol))
}

/// Score of [`dense_rw_loglik`] with respect to `(log σ_Ψ, log σ_ε)`.
pub fn dense_rw_score(data: &RandomWalkData, s_psi: f64, s_eps: f64) -> [f64; 2] {
    let s = summarize(data);
    let (vp, ve) = (s_psi * s_psi, s_eps * s_eps);
    let (cov, walk, noise) = step_mean_cov(&s, vp, ve);
    let inv = cov.try_inverse().expect("covariance is invertible");
    let y = DVector::from_column_slice(&s.means);
    let a = &inv * &y;
    let outer = &a * a.transpose() - &inv;
    let d_psi = 0.5 * (&outer * (&walk * (2.0 * vp))).trace();
    let within = -(s.n_obs - s.idx.len() as f64) + s.ssw / ve;
    let d_eps = 0.5 * (&outer * (&noise * (2.0 * ve))).trace() + within;
    [d_psi, d_eps]
}

/// Exact posterior covariance of Ψ given the data for known variances.
pub fn rw_posterior_cov(data: &RandomWalkData, s_psi: f64, s_eps: f64) -> DMatrix<f64> {
    let t = data.time_steps();
    // increments Ψ_1 - 0, Ψ_2 - Ψ_1, ... as rows of a difference operator
    let d = DMatrix::from_fn(t, t, |i, j| {
        if i == j {
            1.0
        } else if j + 1 == i {
            -1.0
        } else {
            0.0
        }
    });
    let mut prec = d.transpose() * d / (s_psi * s_psi);
    let counts = data.counts();
    for i in 0..t {
        prec[(i, i)] += counts[i] as f64 / (s_eps * s_eps);
    }
    prec.try_inverse().expect("posterior precision is invertible")
}

/// Random-walk data with each cell independently missing with probability
/// `p_missing`; at least one cell is always observed.
pub fn random_rw<R: Rng>(rng: &mut R, t: usize, n: usize, s_psi: f64, s_eps: f64, p_missing: f64) -> RandomWalkData {
    let mut level = 0.0;
    let mut y = DMatrix::zeros(t, n);
    for s in 0..t {
        let z: f64 = rng.sample(StandardNormal);
        level += s_psi * z;
        for i in 0..n {
            let e: f64 = rng.sample(StandardNormal);
            y[(s, i)] = level + s_eps * e;
        }
    }
    let mut observed = DMatrix::from_fn(t, n, |_, _| rng.random::<f64>() >= p_missing);
    observed[(0, 0)] = true;
    RandomWalkData::new(y, observed).expect("valid random-walk data")
}

/// A smooth curve plus noise on `n` equally spaced points, with a B-spline
/// basis of dimension `k`.
pub fn random_spline<R: Rng>(rng: &mut R, n: usize, k: usize, noise: f64) -> SplineData {
    let phase: f64 = rng.random_range(0.0..3.0);
    let x: Vec<f64> = (0..n).map(|i| 1900.0 + i as f64).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let u = i as f64 / n as f64;
            let e: f64 = rng.sample(StandardNormal);
            0.4 * (6.0 * u + phase).sin() + 0.3 * u + noise * e
        })
        .collect();
    SplineData::with_bspline(x, y, k).expect("valid spline data")
}

/// `m` units with `r` observations each, drawn around zero-mean effects.
pub fn balanced_units<R: Rng>(rng: &mut R, m: usize, r: usize, s_psi: f64, s_eps: f64) -> Vec<Vec<f64>> {
    (0..m)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (0..r)
                .map(|_| {
                    let e: f64 = rng.sample(StandardNormal);
                    s_psi * z + s_eps * e
                })
                .collect()
        })
        .collect()
}

/// Sufficient statistics of balanced units: `(m, r, Σ ȳ_i², SSW)`.
pub fn unit_stats(units: &[Vec<f64>]) -> (f64, f64, f64, f64) {
    let m = units.len() as f64;
    let r = units[0].len() as f64;
    let mut s = 0.0;
    let mut ssw = 0.0;
    for u in units {
        let mean = u.iter().sum::<f64>() / r;
        s += mean * mean;
        ssw += u.iter().map(|v| (v - mean).powi(2)).sum::<f64>();
    }
    (m, r, s, ssw)
}

/// Closed-form maximizer of the balanced-units marginal likelihood in
/// `(log σ_Ψ, log σ_ε)`, assuming the between-unit variance is positive.
pub fn balanced_mmle(units: &[Vec<f64>]) -> [f64; 2] {
    let (m, r, s, ssw) = unit_stats(units);
    let ve = ssw / (m * (r - 1.0));
    let vp = s / m - ve / r;
    assert!(vp > 0.0, "between-unit variance estimate is not positive");
    [0.5 * vp.ln(), 0.5 * ve.ln()]
}

/// Hessian of the balanced-units marginal log-likelihood in
/// `(log σ_Ψ, log σ_ε)`, by hand differentiation.
pub fn balanced_loglik_hessian(units: &[Vec<f64>], theta: [f64; 2]) -> DMatrix<f64> {
    let (m, r, s, ssw) = unit_stats(units);
    let (ea, eb) = ((2.0 * theta[0]).exp(), (2.0 * theta[1]).exp());
    let v = ea + eb / r;
    let d1 = -m / (2.0 * v) + s / (2.0 * v * v);
    let d2 = m / (2.0 * v * v) - s / (v * v * v);
    let (va, vb) = (2.0 * ea, 2.0 * eb / r);
    let (vaa, vbb) = (4.0 * ea, 4.0 * eb / r);
    let haa = d2 * va * va + d1 * vaa;
    let hab = d2 * va * vb;
    let hbb = d2 * vb * vb + d1 * vbb - 2.0 * ssw / eb;
    DMatrix::from_row_slice(2, 2, &[haa, hab, hab, hbb])
}
