mod common;

use condinf::laplace::{inner_newton, laml, solve_at};
use condinf::model_core::{eval_joint, fd_gradient, fd_hessian, JointModel, PsiVector};
use condinf::models::{
    build_rw_model, build_spline_model, simulate_rw_data, simulate_rw_truth, GaussianUnitsModel, RandomWalkData,
};
use common::{dense_rw_loglik, random_rw, random_spline};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn max_rel(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let scale = b.amax().max(1e-300);
    (a - b).amax() / scale
}

type Instance = (Box<dyn JointModel>, DVector<f64>, DVector<f64>);

/// One instance of each built-in model with matching (Ψ, θ) draws.
fn instances(seed: u64) -> Vec<Instance> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out: Vec<Instance> = Vec::new();

    let t = rng.random_range(3..15);
    let rw = build_rw_model(&random_rw(&mut rng, t, 3, 1.0, 0.5, 0.3));
    let psi = DVector::from_fn(t, |_, _| rng.random_range(-2.0..2.0));
    let theta = DVector::from_vec(vec![rng.random_range(-1.0..0.5), rng.random_range(-1.5..0.0)]);
    out.push((Box::new(rw), psi, theta));

    let sp = build_spline_model(&random_spline(&mut rng, 40, 8, 0.1));
    let psi = DVector::from_fn(sp.psi_dim(), |_, _| rng.random_range(-1.0..1.0));
    let theta = DVector::from_vec(vec![rng.random_range(-0.5..0.5), rng.random_range(-2.5..-1.0), rng.random_range(-2.0..4.0)]);
    out.push((Box::new(sp), psi, theta));

    let units: Vec<Vec<f64>> = (0..5)
        .map(|i| (0..i).map(|_| rng.random_range(-2.0..2.0)).collect())
        .collect();
    let gu = GaussianUnitsModel::new(&units).unwrap().with_prior_mean();
    let psi = DVector::from_fn(5, |_, _| rng.random_range(-2.0..2.0));
    let theta = DVector::from_vec(vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..0.5), rng.random_range(-1.0..0.5)]);
    out.push((Box::new(gu), psi, theta));
    out
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 10, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn hess_c_is_hess_j_minus_hess_r(seed in any::<u64>()) {
        for (model, psi, theta) in instances(seed) {
            let e = model.eval(&psi, &theta).unwrap();
            let independent = model.conditional_hessian(&psi, &theta).unwrap();
            let scale = independent.amax().max(1.0);
            prop_assert!((e.hess_c() - &independent).amax() <= 1e-9 * scale);
        }
    }

    #[test]
    fn analytic_blocks_match_finite_differences(seed in any::<u64>()) {
        for (model, psi, theta) in instances(seed) {
            let e = model.eval(&psi, &theta).unwrap();
            let lj = |p: &DVector<f64>| -> condinf::Result<f64> {
                let (c, r) = model.log_densities(p, &theta)?;
                Ok(c + r)
            };
            let g = fd_gradient(lj, &psi).unwrap();
            prop_assert!(max_rel(&DMatrix::from_column_slice(g.len(), 1, g.as_slice()),
                &DMatrix::from_column_slice(g.len(), 1, e.grad_psi.as_slice())) < 1e-4);
            let h = fd_hessian(lj, &psi).unwrap();
            prop_assert!(max_rel(&h, &e.hess_j) < 1e-4);

            // cross block: central differences of the analytic gradient in θ
            let mut cross = DMatrix::zeros(psi.len(), theta.len());
            for k in 0..theta.len() {
                let step = 1e-5;
                let mut tp = theta.clone();
                let mut tm = theta.clone();
                tp[k] += step;
                tm[k] -= step;
                let gp = model.eval(&psi, &tp).unwrap().grad_psi;
                let gm = model.eval(&psi, &tm).unwrap().grad_psi;
                cross.set_column(k, &((gp - gm) / (2.0 * step)));
            }
            prop_assert!(max_rel(&cross, &e.cross_theta) < 1e-4);
        }
    }

    #[test]
    fn evaluation_is_pure(seed in any::<u64>()) {
        for (model, psi, theta) in instances(seed) {
            let psi_v = PsiVector::new(psi.clone()).unwrap();
            let th = model.theta_vector(theta.as_slice()).unwrap();
            let a = eval_joint(model.as_ref(), &psi_v, &th).unwrap();
            let b = eval_joint(model.as_ref(), &psi_v, &th).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn rw_laml_equals_dense_gaussian(seed in any::<u64>(), t in 2usize..40, n in 1usize..4, p_missing in 0.0f64..0.4) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let s_psi: f64 = rng.random_range(0.3..2.0);
        let s_eps: f64 = rng.random_range(0.2..1.0);
        let data = random_rw(&mut rng, t, n, s_psi, s_eps, p_missing);
        let model = build_rw_model(&data);
        let th = model.theta_vector(&[s_psi.ln(), s_eps.ln()]).unwrap();
        let got = laml(&model, &th).unwrap();
        prop_assert!((got - dense_rw_loglik(&data, s_psi, s_eps)).abs() < 1e-8);
    }

    #[test]
    fn laml_does_not_depend_on_the_starting_point(seed in any::<u64>()) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed ^ 0x5eed);
        for (model, _, theta) in instances(seed) {
            let th = model.theta_vector(theta.as_slice()).unwrap();
            let zero = inner_newton(model.as_ref(), &th, &PsiVector::zeros(model.psi_dim())).unwrap();
            let start = DVector::from_fn(model.psi_dim(), |_, _| rng.random_range(-5.0..5.0));
            let other = inner_newton(model.as_ref(), &th, &PsiVector::new(start).unwrap()).unwrap();
            prop_assert!((zero.laml - other.laml).abs() < 1e-10);
        }
    }

    #[test]
    fn rw_newton_converges_in_one_step(seed in any::<u64>()) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let data = random_rw(&mut rng, 30, 3, 1.0, 0.5, 0.2);
        let model = build_rw_model(&data);
        let th = model.theta_vector(&[0.0, 0.5f64.ln()]).unwrap();
        let sol = inner_newton(&model, &th, &PsiVector::zeros(30)).unwrap();
        prop_assert!(sol.iterations <= 1);
        prop_assert!(sol.grad_norm < 1e-8);
    }

    #[test]
    fn spline_mode_is_the_ridge_solution(seed in any::<u64>()) {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let data = random_spline(&mut rng, 60, 10, 0.1);
        let model = build_spline_model(&data);
        let (b0, log_s, log_l) = (rng.random_range(-0.5..0.5), rng.random_range(-2.5..-1.0), rng.random_range(-2.0..6.0));
        let sol = solve_at(&model, &DVector::from_vec(vec![b0, log_s, log_l])).unwrap();
        let var = (2.0f64 * log_s).exp();
        let x = &data.design;
        let lhs = x.transpose() * x / var + &data.penalty * log_l.exp();
        let rhs = x.transpose() * DVector::from_iterator(60, data.y.iter().map(|v| v - b0)) / var;
        let ridge = lhs.lu().solve(&rhs).unwrap();
        let scale = ridge.amax().max(1.0);
        prop_assert!((&sol.psi_hat.values - &ridge).amax() < 1e-8 * scale);
        let expected_hess = x.transpose() * x * (-1.0 / var) - &data.penalty * log_l.exp();
        prop_assert!(max_rel(&sol.hess_j, &expected_hess) < 1e-12);
    }
}

#[test]
fn spline_mode_tends_to_least_squares() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let data = random_spline(&mut rng, 80, 12, 0.1);
    let model = build_spline_model(&data);
    let b0 = 0.05;
    let sol = solve_at(&model, &DVector::from_vec(vec![b0, 0.1f64.ln(), 1e-10f64.ln()])).unwrap();
    let x = &data.design;
    let rhs = x.transpose() * DVector::from_iterator(80, data.y.iter().map(|v| v - b0));
    let ls = (x.transpose() * x).cholesky().unwrap().solve(&rhs);
    assert!((&sol.psi_hat.values - &ls).amax() < 1e-6 * ls.amax().max(1.0));
}

#[test]
fn random_walk_increments_have_unit_variance() {
    let mut rng = ChaCha12Rng::seed_from_u64(2024);
    let paths = 10_000;
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut count = 0.0;
    let mut at = [(0usize, 0.0f64, 0.0f64), (24, 0.0, 0.0), (49, 0.0, 0.0)];
    for _ in 0..paths {
        let psi = simulate_rw_truth(50, 1.0, &mut rng).unwrap().values;
        for s in 1..50 {
            let d = psi[s] - psi[s - 1];
            sum += d;
            sum_sq += d * d;
            count += 1.0;
        }
        for a in at.iter_mut() {
            a.1 += psi[a.0];
            a.2 += psi[a.0] * psi[a.0];
        }
    }
    let mean = sum / count;
    let var = sum_sq / count - mean * mean;
    assert!((var - 1.0).abs() < 0.03, "increment variance {var}");
    let n = paths as f64;
    for (t, s1, s2) in at {
        let true_var = (t + 1) as f64;
        let m = s1 / n;
        let v = s2 / n - m * m;
        assert!(m.abs() < 3.0 * (true_var / n).sqrt(), "mean at {t}: {m}");
        assert!((v - true_var).abs() < 3.0 * true_var * (2.0 / (n - 1.0)).sqrt(), "variance at {t}: {v}");
    }
}

#[test]
fn observation_means_track_the_truth() {
    let mut rng = ChaCha12Rng::seed_from_u64(99);
    let psi = simulate_rw_truth(50, 1.0, &mut rng).unwrap();
    let reps = 1000;
    let mut total: DVector<f64> = DVector::zeros(50);
    let mut resid_sq = 0.0;
    for _ in 0..reps {
        let data: RandomWalkData = simulate_rw_data(&psi, 5, 0.5, &[false; 50], &mut rng).unwrap();
        for s in 0..50 {
            for i in 0..5 {
                total[s] += data.y[(s, i)];
                resid_sq += (data.y[(s, i)] - psi.values[s]).powi(2);
            }
        }
    }
    let tol = 3.0 * 0.5 / ((5 * reps) as f64).sqrt();
    for s in 0..50 {
        let m = total[s] / (5 * reps) as f64;
        assert!((m - psi.values[s]).abs() < tol, "step {s}: {m} vs {}", psi.values[s]);
    }
    let cells = (50 * 5 * reps) as f64;
    let v = resid_sq / cells;
    assert!((v - 0.25).abs() < 3.0 * 0.25 * (2.0 / cells).sqrt(), "noise variance {v}");
}
