use observer_pi::experiments::{closed_form_h, closed_form_policy, linear_problem};
use observer_pi::linalg::{self, Mat, Vector};
use observer_pi::{
    build_reconstruction, closed_form_value_matrix, extract_windows, simulate_linear,
    simulate_pendulum, solve_discounted_riccati, spectral_radius, truncated_cost_to_go,
    CorrectionPolicy, CostConfig, ExcitationConfig, Integrator, PendulumParams, SystemModel,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn scalar(a: f64, c: f64) -> SystemModel {
    SystemModel::new(
        Mat::from_element(1, 1, a),
        Mat::from_element(1, 1, 1.0),
        Mat::from_element(1, 1, c),
        0.1,
    )
    .unwrap()
}

fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (f(lo) > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn scalar_riccati_matches_positive_root() {
    let cost = CostConfig::new(Mat::identity(1, 1), Mat::identity(1, 1), 0.9).unwrap();
    let p = solve_discounted_riccati(&scalar(0.5, 1.0), &cost, 1e-12, 10_000).unwrap().p[(0, 0)];
    let root = bisect(|p| 1.0 + 0.225 * p - 0.2025 * p * p / (1.0 + 0.9 * p) - p, 0.0, 100.0);
    assert!((p - root).abs() < 1e-10, "{p} vs {root}");
}

#[test]
fn closed_form_h_arithmetic() {
    let rec = build_reconstruction(&scalar(0.5, 1.0)).unwrap();
    let h = closed_form_value_matrix(&Mat::from_element(1, 1, 2.0), &rec).unwrap();
    let expect = Mat::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 0.5]);
    assert!((h.matrix() - expect).amax() < 1e-14);
    let pend = build_reconstruction(&SystemModel::linear_pendulum()).unwrap();
    let zero = closed_form_value_matrix(&Mat::zeros(2, 2), &pend).unwrap();
    assert_eq!(zero.matrix(), &Mat::zeros(6, 6));
}

#[test]
fn pendulum_h_star_is_psd_and_consistent_with_p() {
    let model = SystemModel::linear_pendulum();
    let cost = CostConfig::pendulum_default();
    let h = closed_form_h(&model, &cost).unwrap();
    let min = linalg::sym_eigenvalues(h.matrix()).iter().copied().fold(f64::INFINITY, f64::min);
    assert!(min > -1e-9 * h.matrix().norm());
    // top-left block is P because M_w starts with −I
    let p = solve_discounted_riccati(&model, &cost, 1e-12, 10_000).unwrap().p;
    assert!((h.h11() - &p).amax() < 1e-12);
}

#[test]
fn pendulum_eigenvalues_from_characteristic_polynomial() {
    let a = SystemModel::linear_pendulum().a().clone();
    let tr = a[(0, 0)] + a[(1, 1)];
    let det = a[(0, 0)] * a[(1, 1)] - a[(0, 1)] * a[(1, 0)];
    let disc = tr * tr - 4.0 * det;
    // complex pair, modulus sqrt(det)
    assert!(disc < 0.0);
    assert!((spectral_radius(&a) - det.sqrt()).abs() < 1e-8);
    assert!(spectral_radius(&a) < 1.0);
}

#[test]
fn luenberger_error_decays_at_spectral_rate() {
    let model = SystemModel::linear_pendulum();
    // A − LC with eigenvalues 0.5 and 0.3
    let l = Mat::from_column_slice(2, 1, &[-0.198_469_387_755_102_04, 1.09]);
    let acl = model.a() - &l * model.c();
    assert!((spectral_radius(&acl) - 0.5).abs() < 1e-9);
    let v = Mat::from_columns(&[
        Vector::from_vec(vec![acl[(0, 1)], 0.5 - acl[(0, 0)]]),
        Vector::from_vec(vec![acl[(0, 1)], 0.3 - acl[(0, 0)]]),
    ]);
    let sv = linalg::singular_values(&v);
    let kappa = sv.iter().copied().fold(0.0, f64::max) / sv.iter().copied().fold(f64::INFINITY, f64::min);
    let traj = simulate_linear(
        &model,
        &CorrectionPolicy::Luenberger { gain: l },
        &ExcitationConfig::noiseless(),
        &Vector::zeros(2),
        &Vector::from_vec(vec![-1.0, 1.0]),
        60,
    )
    .unwrap();
    let e0 = traj.records[0].x_tilde.as_ref().unwrap().norm();
    for (k, r) in traj.records.iter().enumerate() {
        let e = r.x_tilde.as_ref().unwrap().norm();
        assert!(e <= kappa * 0.5f64.powi(k as i32) * e0 * (1.0 + 1e-9), "step {k}: {e}");
    }
}

/// Exact zero-order-hold discretization of the linearized pendulum.
fn linearized_pendulum_step(t: f64) -> Mat {
    Mat::from_row_slice(2, 2, &[0.0, 1.0, -10.0, -0.1]).scale(t).exp()
}

#[test]
fn small_angle_pendulum_follows_linearization() {
    let params = PendulumParams { substeps: 50, ..PendulumParams::default() };
    let traj = simulate_pendulum(
        &params,
        &SystemModel::linear_pendulum(),
        &CorrectionPolicy::Zero,
        &ExcitationConfig::noiseless(),
        [0.01, 0.0],
        &Vector::zeros(2),
        20,
    )
    .unwrap();
    let states = traj.diagnostic_plant_state.unwrap();
    let ad = linearized_pendulum_step(0.1);
    let mut x = Vector::from_vec(vec![0.01, 0.0]);
    for s in &states[..20] {
        assert!((s - &x).norm() <= 1e-3 * x.norm(), "{s} vs {x}");
        x = &ad * x;
    }
}

#[test]
fn rk4_and_euler_agree_with_fine_steps() {
    let fine = |integrator| PendulumParams { integrator, substeps: 2000, ..PendulumParams::default() };
    let (mut a, mut b) = ([3.0, 0.0], [3.0, 0.0]);
    for _ in 0..10 {
        a = fine(Integrator::Rk4).step(a, 0.0);
        b = fine(Integrator::Euler).step(b, 0.0);
    }
    assert!((a[0] - b[0]).abs() < 1e-2 && (a[1] - b[1]).abs() < 1e-2);
}

#[test]
fn optimal_rollout_cost_matches_riccati_value() {
    let model = SystemModel::linear_pendulum();
    let cost = CostConfig::pendulum_default();
    let problem = linear_problem(model.clone(), cost.clone()).unwrap();
    let spec = problem.rollout.clone().unwrap();
    let policy = closed_form_policy(&model, &cost).unwrap();
    let traj = problem.rollout_trajectory(&policy, &spec).unwrap();
    let p = solve_discounted_riccati(&model, &cost, 1e-12, 10_000).unwrap().p;
    let x = traj.records[spec.start].x_tilde.clone().unwrap();
    let value = linalg::quad_form(&p, &x);
    let c = truncated_cost_to_go(&traj, &cost, spec.start, spec.horizon).unwrap();
    assert!((c - value).abs() <= 0.01 * value, "{c} vs {value}");
}

#[test]
fn random_three_state_reconstruction() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = Mat::from_fn(3, 3, |_, _| rng.random_range(-0.6..0.6));
    let b = Mat::from_fn(3, 1, |_, _| rng.random_range(-1.0..1.0));
    let c = Mat::from_fn(1, 3, |_, _| rng.random_range(-1.0..1.0));
    let model = SystemModel::new(a, b, c, 0.1).unwrap();
    let rec = build_reconstruction(&model).unwrap();
    let traj = simulate_linear(
        &model,
        &CorrectionPolicy::Zero,
        &ExcitationConfig { probe_probability: 1.0, ..ExcitationConfig::default() }.with_seed(5),
        &Vector::from_vec(vec![1.0, -0.5, 0.2]),
        &Vector::zeros(3),
        50,
    )
    .unwrap();
    for w in extract_windows(&traj, 3).unwrap() {
        let est = rec.reconstruct_stacked(&w.x_k).unwrap();
        let truth = traj.records[w.k].x_tilde.as_ref().unwrap();
        assert!((est - truth).amax() < 1e-10);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reconstruction_is_linear(
        w in prop::collection::vec(-5.0..5.0f64, 4),
        y in prop::collection::vec(-5.0..5.0f64, 2),
        s in -3.0..3.0f64,
    ) {
        let rec = build_reconstruction(&SystemModel::linear_pendulum()).unwrap();
        let w = Vector::from_vec(w);
        let y = Vector::from_vec(y);
        let base = rec.reconstruct_error_state(&w, &y).unwrap();
        let scaled = rec.reconstruct_error_state(&(&w * s), &(&y * s)).unwrap();
        prop_assert!((scaled - base * s).amax() < 1e-9);
    }

    #[test]
    fn scalar_riccati_is_a_fixed_point(
        a in -1.5..1.5f64,
        c in 0.2..2.0f64,
        q in 0.1..5.0f64,
        r in 0.1..5.0f64,
        g in 0.0..0.95f64,
    ) {
        let cost = CostConfig::new(Mat::from_element(1, 1, q), Mat::from_element(1, 1, r), g).unwrap();
        let p = solve_discounted_riccati(&scalar(a, c), &cost, 1e-12, 100_000).unwrap().p[(0, 0)];
        let rhs = c * c * q + g * a * a * p - g * g * a * a * p * p / (r + g * p);
        prop_assert!(p >= c * c * q - 1e-12);
        prop_assert!((rhs - p).abs() < 1e-9 * p.max(1.0));
    }

    #[test]
    fn cost_to_go_scales_quadratically(s in 0.1..10.0f64) {
        let model = SystemModel::linear_pendulum();
        let cost = CostConfig::pendulum_default();
        let policy = closed_form_policy(&model, &cost).unwrap();
        let run = |xhat: Vector| {
            let t = simulate_linear(&model, &policy, &ExcitationConfig::noiseless(), &Vector::zeros(2), &xhat, 40).unwrap();
            truncated_cost_to_go(&t, &cost, 2, 37).unwrap()
        };
        let base = run(Vector::from_vec(vec![-1.0, 1.0]));
        let scaled = run(Vector::from_vec(vec![-s, s]));
        prop_assert!((scaled - s * s * base).abs() < 1e-9 * scaled.max(1.0));
    }
}
