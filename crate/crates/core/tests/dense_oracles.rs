mod common;

use adaptive_sgp::adaptive::{AdaptiveConfig, AdaptiveState};
use adaptive_sgp::agp_vsi::{elbo_lambda, VariationalQ};
use adaptive_sgp::kernel::KernelParams;
use adaptive_sgp::vsgp::{collapsed_bound_with_jitter, fit_batch, initial_guess, optimal_q_with_jitter, VsgpModel};
use common::*;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

fn state(inst: &Instance, lambda: f64) -> AdaptiveState {
    let n = inst.y.len();
    let cfg = AdaptiveConfig { lambda, window_t: n, capacity_m: inst.u.nrows(), jitter: 0.0 };
    AdaptiveState::new(cfg, &inst.x, &inst.y, inst.u.clone(), inst.params, inst.log_noise).unwrap()
}

#[test]
fn bound_with_data_as_inducing_set_is_exact_marginal_likelihood() {
    let mut r = rng(1);
    let x = DMatrix::from_fn(6, 1, |i, _| i as f64 * 0.7 + r.random_range(0.0..0.1));
    let y = DVector::from_fn(6, |_, _| r.random_range(-1.0..1.0));
    let p = KernelParams::new(1.3, 0.6);
    let f = collapsed_bound_with_jitter(&x, &y, &x, &p, -1.5, 0.0).unwrap();
    assert!(rel_err(f, exact_lml(&x, &y, &p, -1.5)) < 1e-8);
}

#[test]
fn collapsed_bound_matches_dense_evaluation() {
    let mut r = rng(2);
    for _ in 0..20 {
        let inst = random_instance(&mut r, 20, 5, 2);
        let f = collapsed_bound_with_jitter(&inst.x, &inst.y, &inst.u, &inst.params, inst.log_noise, 0.0).unwrap();
        let w = DVector::from_element(20, 1.0);
        let oracle = dense_bound(&inst.x, &inst.y, &w, &inst.u, &inst.params, inst.log_noise);
        assert!(rel_err(f, oracle) < 1e-8, "{f} vs {oracle}");
        assert!(f <= exact_lml(&inst.x, &inst.y, &inst.params, inst.log_noise) + 1e-8);
    }
}

#[test]
fn optimal_q_and_prediction_match_dense_assembly() {
    let mut r = rng(3);
    for _ in 0..20 {
        let inst = random_instance(&mut r, 20, 5, 2);
        let (mu, a) = optimal_q_with_jitter(&inst.x, &inst.y, &inst.u, &inst.params, inst.log_noise, 0.0).unwrap();
        let w = DVector::from_element(20, 1.0);
        let (mu_o, a_o) = dense_q(&inst.x, &inst.y, &w, &inst.u, &inst.params, inst.log_noise);
        assert!(rel_err_vec(&mu, &mu_o) < 1e-9);
        assert!(rel_err_mat(&a, &a_o) < 1e-9);

        let model = VsgpModel::from_data(&inst.x, &inst.y, inst.u.clone(), inst.params, inst.log_noise, 0.0).unwrap();
        let xs = DVector::from_fn(2, |_, _| r.random_range(-2.0..2.0));
        let pd = model.predict(&xs);
        let (m_o, v_o) = dense_predict(&inst.u, &inst.params, &mu_o, &a_o, &xs);
        assert!((pd.mean - m_o).abs() < 1e-9 * m_o.abs().max(1.0));
        assert!((pd.var - v_o.max(0.0)).abs() < 1e-9 * inst.params.variance());
    }
}

#[test]
fn adaptive_quantities_match_dense_weighted_assembly() {
    let mut r = rng(4);
    for _ in 0..20 {
        let inst = random_instance(&mut r, 15, 4, 2);
        let lambda = r.random_range(0.8..1.0);
        let s = state(&inst, lambda);
        let w = weights(15, lambda);

        let oracle = dense_bound(&inst.x, &inst.y, &w, &inst.u, &inst.params, inst.log_noise);
        assert!(rel_err(s.adaptive_bound().unwrap(), oracle) < 1e-8);

        let (mu, a) = s.adaptive_q();
        let (mu_o, a_o) = dense_q(&inst.x, &inst.y, &w, &inst.u, &inst.params, inst.log_noise);
        assert!(rel_err_vec(&mu, &mu_o) < 1e-9);
        assert!(rel_err_mat(&a, &a_o) < 1e-9);

        // adaptive predictive equals the batch predictive formula fed the adaptive q
        let xs = DVector::from_fn(2, |_, _| r.random_range(-2.0..2.0));
        let (m, v) = s.adaptive_predict_raw(&xs);
        let (m_o, v_o) = dense_predict(&inst.u, &inst.params, &mu_o, &a_o, &xs);
        assert!((m - m_o).abs() < 1e-9 * m_o.abs().max(1.0));
        assert!((v - v_o).abs() < 1e-9 * inst.params.variance());
    }
}

#[test]
fn single_sample_window_bound_is_scalar_formula() {
    let mut r = rng(5);
    let inst = random_instance(&mut r, 1, 3, 1);
    let s = state(&inst, 0.9);
    let (var, ell, noise) = (inst.params.variance(), inst.params.lengthscale(), inst.log_noise.exp());
    let k = dense_kernel(&inst.u, &inst.x, var, ell);
    let q = (k.transpose() * inv(&dense_kernel(&inst.u, &inst.u, var, ell)) * &k)[(0, 0)];
    let y = inst.y[0];
    let c = noise + q;
    let expected = -0.5 * (2.0 * std::f64::consts::PI * c).ln() - 0.5 * y * y / c - (var - q) / (2.0 * noise);
    assert!(rel_err(s.adaptive_bound().unwrap(), expected) < 1e-10);
}

#[test]
fn relevance_scores_match_direct_sums() {
    let mut r = rng(6);
    for _ in 0..20 {
        let inst = random_instance(&mut r, 12, 4, 2);
        let lambda = r.random_range(0.8..1.0);
        let s = state(&inst, lambda);
        let w = weights(12, lambda);
        let (var, ell) = (inst.params.variance(), inst.params.lengthscale());
        let kux = dense_kernel(&inst.u, &inst.x, var, ell);
        let ki = inv(&dense_kernel(&inst.u, &inst.u, var, ell));
        let mut r_tot = 0.0;
        for t in 0..12 {
            let k = kux.column(t);
            r_tot += w[t] * (var - (k.transpose() * &ki * k)[(0, 0)]);
        }
        assert!((s.relevance_total() - r_tot.max(0.0)).abs() < 1e-10 * var * 12.0);
        let rm = s.relevance_per_point();
        for m in 0..4 {
            let direct: f64 = (0..12).map(|t| w[t] * kux[(m, t)].powi(2) / var).sum();
            assert!((rm[m] - direct).abs() < 1e-10 * direct.max(1.0));
        }
    }
}

#[test]
fn relevance_decomposes_for_single_and_distant_inducing_points() {
    let mut r = rng(7);
    let x = DMatrix::from_fn(10, 1, |_, _| r.random_range(-1.0..1.0));
    let y = DVector::from_fn(10, |_, _| r.random_range(-1.0..1.0));
    let p = KernelParams::new(1.4, 0.5);
    for u in [DMatrix::from_element(1, 1, 0.2), DMatrix::from_row_slice(3, 1, &[-40.0, 0.0, 40.0])] {
        let cfg = AdaptiveConfig { lambda: 0.9, window_t: 10, capacity_m: 3, jitter: 0.0 };
        let s = AdaptiveState::new(cfg, &x, &y, u, p, -1.0).unwrap();
        let sum_rm = s.relevance_per_point().sum();
        assert!((s.relevance_total() - (s.w_ksum() - sum_rm)).abs() < 1e-8);
    }
}

#[test]
fn relevance_vanishes_when_inducing_set_is_the_window() {
    let x = DMatrix::from_row_slice(4, 1, &[0.0, 0.8, 1.5, 2.6]);
    let y = DVector::from_element(4, 1.0);
    let cfg = AdaptiveConfig { lambda: 0.95, window_t: 4, capacity_m: 4, jitter: 0.0 };
    let s = AdaptiveState::new(cfg, &x, &y, x.clone(), KernelParams::new(1.0, 0.5), -2.0).unwrap();
    assert!(s.relevance_total() < 1e-8);
}

#[test]
fn elbo_matches_per_sample_expectation() {
    let mut r = rng(8);
    for _ in 0..20 {
        let inst = random_instance(&mut r, 12, 3, 2);
        let w = weights(12, r.random_range(0.8..1.0));
        let mean = DVector::from_fn(3, |_, _| r.random_range(-1.0..1.0));
        let mut l = DMatrix::from_fn(3, 3, |i, j| if i > j { r.random_range(-0.3..0.3) } else { 0.0 });
        for i in 0..3 {
            l[(i, i)] = r.random_range(0.2..1.0);
        }
        let q = VariationalQ { mean: mean.clone(), cov_chol: l };
        let e = elbo_lambda(&inst.x, &inst.y, &w, &inst.u, &inst.params, inst.log_noise, &q, 0.0).unwrap();
        let oracle = dense_elbo(&inst.x, &inst.y, &w, &inst.u, &inst.params, inst.log_noise, &mean, &q.cov());
        assert!(rel_err(e, oracle) < 1e-9, "{e} vs {oracle}");
    }
}

#[test]
fn elbo_at_optimal_q_is_the_collapsed_bound() {
    let mut r = rng(9);
    for _ in 0..10 {
        let inst = random_instance(&mut r, 15, 4, 1);
        let (mu, a) = optimal_q_with_jitter(&inst.x, &inst.y, &inst.u, &inst.params, inst.log_noise, 0.0).unwrap();
        let q = VariationalQ::from_cov(mu, &a).unwrap();
        let w = DVector::from_element(15, 1.0);
        let e = elbo_lambda(&inst.x, &inst.y, &w, &inst.u, &inst.params, inst.log_noise, &q, 0.0).unwrap();
        let f = collapsed_bound_with_jitter(&inst.x, &inst.y, &inst.u, &inst.params, inst.log_noise, 0.0).unwrap();
        assert!((e - f).abs() < 1e-6, "{e} vs {f}");
    }
}

#[test]
fn adaptive_q_maximizes_the_weighted_elbo() {
    let mut r = rng(10);
    for _ in 0..5 {
        let inst = random_instance(&mut r, 15, 4, 1);
        let lambda = r.random_range(0.85..1.0);
        let s = state(&inst, lambda);
        let w = weights(15, lambda);
        let (mu, a) = s.adaptive_q();
        let best = VariationalQ::from_cov(mu, &a).unwrap();
        let e_best = elbo_lambda(&inst.x, &inst.y, &w, &inst.u, &inst.params, inst.log_noise, &best, 0.0).unwrap();
        // the weighted optimum equals the weighted collapsed bound minus ½ Σ log w
        let half_log_w: f64 = 0.5 * w.iter().map(|v| v.ln()).sum::<f64>();
        assert!((e_best - (s.adaptive_bound().unwrap() - half_log_w)).abs() < 1e-6);
        for _ in 0..20 {
            let mut q = best.clone();
            q.mean += DVector::from_fn(4, |_, _| r.random_range(-0.2..0.2));
            let mut c = q.chol_params();
            for v in c.iter_mut() {
                *v += r.random_range(-0.2..0.2);
            }
            q.set_chol_params(&c);
            let e = elbo_lambda(&inst.x, &inst.y, &w, &inst.u, &inst.params, inst.log_noise, &q, 0.0).unwrap();
            assert!(e_best - e >= -1e-8);
        }
    }
}

#[test]
fn batch_fit_improves_the_bound_on_toy_data() {
    let (x, y) = adaptive_sgp::stream::toy_dataset(0);
    let x0 = x.rows(0, 100).into_owned();
    let y0 = y.rows(0, 100).into_owned();
    let (u, p, ln) = initial_guess(&x0, &y0, 10, 0).unwrap();
    let before = adaptive_sgp::vsgp::collapsed_bound(&x0, &y0, &u, &p, ln).unwrap();
    let m = fit_batch(&x0, &y0, 10, 200, 0).unwrap();
    let after = adaptive_sgp::vsgp::collapsed_bound(&x0, &y0, &m.inducing, &m.params, m.log_noise).unwrap();
    assert!(after > before, "{after} <= {before}");
}

#[test]
fn inducing_set_equal_to_data_beats_zero_predictor() {
    let mut r = rng(11);
    let x = DMatrix::from_fn(8, 1, |i, _| i as f64 * 0.4);
    let y = DVector::from_fn(8, |i, _| (x[(i, 0)]).sin() + r.random_range(-0.1..0.1));
    let (_, p, ln) = initial_guess(&x, &y, 8, 0).unwrap();
    let model = VsgpModel::from_data(&x, &y, x.clone(), p, ln, 1e-6).unwrap();
    let mut mse = 0.0;
    for i in 0..8 {
        let pd = model.predict(&x.row(i).transpose());
        assert!(pd.var <= p.variance());
        mse += (pd.mean - y[i]).powi(2) / 8.0;
    }
    assert!(mse < y.norm_squared() / 8.0);
}
