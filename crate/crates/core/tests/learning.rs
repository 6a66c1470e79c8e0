use observer_pi::experiments::{closed_form_h, closed_form_policy, linear_excitation};
use observer_pi::linalg::{self, Mat, Vector};
use observer_pi::pi::select_windows;
use observer_pi::{
    assemble_labels, evaluate_policy, extract_mapping, improve_policy, recover_neurons,
    sample_stabilizing_gain, simulate_linear, train_quadratic, ActivationCoeffs,
    CorrectionPolicy, CostConfig, Execution, PiConfig, QnnTrainingProblem, SystemModel,
    ValueMatrix, Warmup, Window,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_inputs(rng: &mut ChaCha8Rng, n: usize, count: usize) -> Vec<Vector> {
    (0..count).map(|_| Vector::from_fn(n, |_, _| rng.random_range(-1.0..1.0))).collect()
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> Mat {
    linalg::symmetrize(&Mat::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0)))
}

fn fit(xs: Vec<Vector>, ys: Vec<f64>, beta: f64) -> Mat {
    let prob = QnnTrainingProblem::new(xs, ys, ActivationCoeffs::pure_quadratic(), beta).unwrap();
    train_quadratic(&prob).unwrap().h
}

#[test]
fn recovers_random_six_by_six_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h0 = random_symmetric(&mut rng, 6);
    let xs = random_inputs(&mut rng, 6, 300);
    let ys = xs.iter().map(|x| linalg::quad_form(&h0, x)).collect();
    assert!((fit(xs, ys, 0.0) - h0).amax() < 1e-7);
}

/// Eigenvalues above an absolute threshold.
fn rank(h: &Mat) -> usize {
    linalg::sym_eigenvalues(h).iter().filter(|l| l.abs() > 1e-6).count()
}

#[test]
fn regularization_path_shrinks_rank() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    // low-rank truth plus label noise: full rank at β = 0
    let u = Mat::from_fn(5, 2, |_, _| rng.random_range(-1.0..1.0));
    let h0 = &u * u.transpose();
    let xs = random_inputs(&mut rng, 5, 200);
    let ys: Vec<f64> =
        xs.iter().map(|x| linalg::quad_form(&h0, x) + rng.random_range(-0.05..0.05)).collect();
    let ranks: Vec<usize> =
        [0.0, 0.1, 1.0, 10.0].iter().map(|&b| rank(&fit(xs.clone(), ys.clone(), b))).collect();
    assert_eq!(ranks[0], 5);
    assert!(ranks.windows(2).all(|w| w[1] <= w[0]), "{ranks:?}");
    let big = fit(xs, ys, 1e6);
    assert!(big.amax() < 1e-8);
}

#[test]
fn pendulum_h_star_neurons_reproduce_form() {
    let h = closed_form_h(&SystemModel::linear_pendulum(), &CostConfig::pendulum_default()).unwrap();
    let neurons = recover_neurons(h.matrix(), ActivationCoeffs::pure_quadratic()).unwrap();
    let sv = linalg::singular_values(h.matrix());
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let numeric_rank = sv.iter().filter(|&&s| s > 1e-10 * smax).count();
    assert_eq!(neurons.len(), numeric_rank);
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for x in random_inputs(&mut rng, 6, 100) {
        let direct = h.eval(&x);
        let net: f64 = neurons.iter().map(|n| n.v * n.w.dot(&x).powi(2)).sum();
        assert!((direct - net).abs() < 1e-9 * direct.abs().max(1.0));
    }
}

#[test]
fn value_matrix_blocks_round_trip() {
    let h = closed_form_h(&SystemModel::linear_pendulum(), &CostConfig::pendulum_default()).unwrap();
    assert_eq!(h.h11(), h.matrix().view((0, 0), (2, 2)).into_owned());
    assert_eq!(h.h_w(), h.matrix().view((0, 2), (2, 2)).into_owned());
    assert_eq!(h.h_y(), h.matrix().view((0, 4), (2, 2)).into_owned());
    let rebuilt = ValueMatrix::from_blocks(
        [&h.h11(), &h.h_w(), &h.h_y(), &h.h22(), &h.h23(), &h.h33()],
        2,
        1,
    )
    .unwrap();
    assert_eq!(rebuilt, h);
}

fn optimal_windows(steps: usize) -> Vec<Window> {
    let model = SystemModel::linear_pendulum();
    let policy = closed_form_policy(&model, &CostConfig::pendulum_default()).unwrap();
    let traj = simulate_linear(
        &model,
        &policy,
        &linear_excitation(21),
        &Vector::zeros(2),
        &Vector::from_vec(vec![-1.0, 1.0]),
        steps,
    )
    .unwrap();
    select_windows(observer_pi::extract_windows(&traj, 2).unwrap(), true, usize::MAX)
}

#[test]
fn optimal_value_satisfies_bellman_identity() {
    let cost = CostConfig::pendulum_default();
    let h = closed_form_h(&SystemModel::linear_pendulum(), &cost).unwrap();
    let windows = optimal_windows(400);
    let labels = assemble_labels(&windows, &h, &cost, Execution::Sequential).unwrap();
    for (w, y) in windows.iter().zip(labels) {
        let lhs = h.eval(&w.x_k);
        assert!((lhs - y).abs() < 1e-8 * lhs.abs().max(1.0), "{lhs} vs {y}");
    }
}

#[test]
fn evaluation_of_optimal_policy_recovers_h_star() {
    let cost = CostConfig::pendulum_default();
    let h_star = closed_form_h(&SystemModel::linear_pendulum(), &cost).unwrap();
    let mut windows = optimal_windows(800);
    windows.truncate(300);
    let eval = evaluate_policy(&windows, 2, 1, &cost, &PiConfig::default(), Execution::Sequential)
        .unwrap();
    assert!(eval.h.frobenius_distance(&h_star) < 0.02 * h_star.matrix().norm());
}

#[test]
fn undiscounted_improvement_is_zero_policy() {
    let cost0 = CostConfig::new(Mat::from_element(1, 1, 10.0), Mat::identity(2, 2), 0.0).unwrap();
    let h = closed_form_h(&SystemModel::linear_pendulum(), &CostConfig::pendulum_default()).unwrap();
    let CorrectionPolicy::MeasuredData { f_w, f_y, .. } = improve_policy(&h, &cost0, Warmup::Zero).unwrap()
    else {
        panic!("measured-data policy expected")
    };
    assert_eq!(f_w.amax(), 0.0);
    assert_eq!(f_y.amax(), 0.0);
}

#[test]
fn hundred_sampled_gains_are_accepted() {
    let model = SystemModel::linear_pendulum();
    let mut total_tries = 0;
    for seed in 0..100 {
        let (l, tries) = sample_stabilizing_gain(&model, seed, 10_000).unwrap();
        assert!(observer_pi::spectral_radius(&(model.a() - &l * model.c())) < 0.95);
        assert_eq!(sample_stabilizing_gain(&model, seed, 10_000).unwrap().0, l);
        total_tries += tries;
    }
    assert!(total_tries >= 100);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn training_ignores_sample_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let h0 = random_symmetric(&mut rng, 4);
        let xs = random_inputs(&mut rng, 4, 40);
        let ys: Vec<f64> = xs.iter().map(|x| linalg::quad_form(&h0, x) + rng.random_range(-0.1..0.1)).collect();
        let mut order: Vec<usize> = (0..xs.len()).collect();
        for i in (1..order.len()).rev() {
            order.swap(i, rng.random_range(0..=i));
        }
        let a = fit(xs.clone(), ys.clone(), 0.0);
        let b = fit(order.iter().map(|&i| xs[i].clone()).collect(), order.iter().map(|&i| ys[i]).collect(), 0.0);
        prop_assert!((a - b).amax() < 1e-9);
    }

    #[test]
    fn fitted_map_matches_network_output(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xs = random_inputs(&mut rng, 6, 40);
        let ys: Vec<f64> = (0..40).map(|_| rng.random_range(0.0..5.0)).collect();
        let prob = QnnTrainingProblem::new(xs.clone(), ys, ActivationCoeffs::pure_quadratic(), 0.0).unwrap();
        let model = train_quadratic(&prob).unwrap();
        let vm = extract_mapping(&model, 2, 1).unwrap();
        for x in &xs {
            let net = model.predict_neurons(x);
            prop_assert!((vm.eval(x) - net).abs() < 1e-8 * net.abs().max(1.0));
        }
    }

    #[test]
    fn labels_are_affine_in_previous_value(seed in any::<u64>(), s in -2.0..2.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cost = CostConfig::pendulum_default();
        let windows: Vec<Window> = optimal_windows(60);
        let h1 = ValueMatrix::new(random_symmetric(&mut rng, 6), 2, 1).unwrap();
        let hs = ValueMatrix::new(h1.matrix() * s, 2, 1).unwrap();
        let y0 = assemble_labels(&windows, &ValueMatrix::zeros(2, 1), &cost, Execution::Sequential).unwrap();
        let y1 = assemble_labels(&windows, &h1, &cost, Execution::Sequential).unwrap();
        let ys = assemble_labels(&windows, &hs, &cost, Execution::Sequential).unwrap();
        for i in 0..windows.len() {
            let expect = y0[i] + s * (y1[i] - y0[i]);
            prop_assert!((ys[i] - expect).abs() < 1e-9 * expect.abs().max(1.0));
        }
    }
}
