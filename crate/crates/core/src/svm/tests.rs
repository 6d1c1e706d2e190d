use super::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(kernel: Kernel, m: usize) -> SvmConfig {
    SvmConfig { lambda: 10.0, epsilon: 0.1, kernel, m, solver: SolverConfig::default() }
}

fn blobs(seed: u64, n: usize) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres = [[0.0, 0.0, 0.0], [2.0, 0.0, 1.0], [0.0, 2.0, -1.0]];
    let mut x = Vec::new();
    let mut l = Vec::new();
    for i in 0..n {
        let c = i % 3;
        x.push(centres[c].iter().map(|v| v + rng.random_range(-0.8..0.8)).collect());
        l.push(c);
    }
    (x, l)
}

#[test]
fn config_validation() {
    assert!(SvmConfig::for_window(25).validate().is_ok());
    let mut c = SvmConfig::for_window(25);
    c.lambda = 0.0;
    assert!(c.validate().is_err());
    let mut c = SvmConfig::for_window(25);
    c.kernel = Kernel::Rbf { gamma: 0.0 };
    assert!(c.validate().is_err());
    assert!(SvmConfig::for_window(1).validate().is_err());
}

#[test]
fn constant_labels_fit_inside_tube() {
    let x: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 * 0.3, (i as f64).sin()]).collect();
    let model = train_svr(&x, &[2.5; 12], &cfg(Kernel::Rbf { gamma: 0.5 }, 2)).unwrap();
    assert_eq!(model.n_support_vectors(), 0);
    assert!((model.predict_value(&[7.0, -1.0]).unwrap() - 2.5).abs() < 1e-12);
}

#[test]
fn classifier_recovers_training_support_vectors() {
    let (x, l) = blobs(1, 60);
    let mut c = cfg(Kernel::Rbf { gamma: 1.0 }, 3);
    c.lambda = 1e3;
    let model = train_svc(&x, &l, 3, &c).unwrap();
    assert_eq!(model.machines.len(), 3);
    for machine in &model.machines {
        assert!(machine.converged);
        assert!(machine.coefficients.iter().all(|a| a.abs() <= c.lambda + 1e-12));
        let (a, b) = machine.classes.unwrap();
        for sv in &machine.support_vectors {
            let i = x.iter().position(|v| v == sv).unwrap();
            assert!(l[i] == a || l[i] == b);
        }
    }
    let sv = &model.machines[0].support_vectors[0];
    let i = x.iter().position(|v| v == sv).unwrap();
    assert_eq!(model.predict_class(sv).unwrap(), l[i]);
    let correct = x.iter().zip(&l).filter(|(v, l)| model.predict_class(v).unwrap() == **l).count();
    assert!(correct >= 57);
}

#[test]
fn single_class_and_length_mismatch_are_errors() {
    let x = vec![vec![0.0, 1.0], vec![1.0, 0.0]];
    assert!(train_svc(&x, &[1, 1], 3, &cfg(Kernel::Linear, 2)).is_err());
    let model = train_svr(&x, &[1.0, 2.0], &cfg(Kernel::Linear, 2)).unwrap();
    assert!(model.predict_value(&[1.0]).is_err());
    assert!(model.predict_class(&[1.0, 1.0]).is_err());
    assert!(train_svr(&x, &[1.0, 2.0], &cfg(Kernel::Linear, 3)).is_err());
}

#[test]
fn vote_ties_use_margin_then_index() {
    let machine = |a, b, bias| Machine {
        support_vectors: vec![],
        coefficients: vec![],
        bias,
        classes: Some((a, b)),
        objective: 0.0,
        iterations: 0,
        kkt_gap: 0.0,
        converged: true,
    };
    let mut model = TrainedModel::new(ModelKind::Classification { n_classes: 3 }, &cfg(Kernel::Linear, 2), vec![], 0);
    // One vote each: 0 beats 1, 1 beats 2, 2 beats 0.
    model.machines = vec![machine(0, 1, 0.5), machine(1, 2, 2.0), machine(0, 2, -0.1)];
    // Margins: class 0: 0.5 − 0.1 = 0.4, class 1: −0.5 + 2 = 1.5, class 2: −2 + 0.1.
    assert_eq!(model.predict_class(&[0.0, 0.0]).unwrap(), 1);
    model.machines = vec![machine(0, 1, 1.0), machine(1, 2, 1.0), machine(0, 2, -1.0)];
    assert_eq!(model.predict_class(&[0.0, 0.0]).unwrap(), 0);
}

#[test]
fn shuffled_training_order_gives_same_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let x: Vec<Vec<f64>> = (0..40).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
    let y: Vec<f64> = x.iter().map(|v| v[0] * 2.0 - v[1].powi(2)).collect();
    let mut c = cfg(Kernel::Rbf { gamma: 0.7 }, 2);
    c.solver.tolerance = 1e-9;
    let a = train_svr(&x, &y, &c).unwrap();
    let order: Vec<usize> = (0..40).rev().collect();
    let xs: Vec<Vec<f64>> = order.iter().map(|&i| x[i].clone()).collect();
    let ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();
    let b = train_svr(&xs, &ys, &c).unwrap();
    for v in [[0.3, -0.2], [1.5, 1.0], [-1.0, 0.4]] {
        let (fa, fb) = (a.predict_value(&v).unwrap(), b.predict_value(&v).unwrap());
        assert!((fa - fb).abs() < 1e-6, "{fa} vs {fb}");
    }
}

#[test]
fn model_json_roundtrip_and_version_check() {
    let (x, l) = blobs(2, 30);
    let model = train_svc(&x, &l, 3, &cfg(Kernel::Rbf { gamma: 0.5 }, 3)).unwrap();
    let text = model.to_json().unwrap();
    let back = TrainedModel::from_json(&text).unwrap();
    assert_eq!(back, model);
    for v in &x {
        assert_eq!(
            back.machines[0].decision(&back.kernel, v).to_bits(),
            model.machines[0].decision(&model.kernel, v).to_bits()
        );
    }
    let bumped = text.replacen("\"format_version\":1", "\"format_version\":2", 1);
    let err = TrainedModel::from_json(&bumped).unwrap_err();
    assert!(err.to_string().contains("format version 2"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn rbf_gram_matrix_is_psd(seed in 0u64..10_000, gamma in 0.01f64..5.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<Vec<f64>> = (0..20).map(|_| (0..3).map(|_| rng.random_range(-3.0..3.0)).collect()).collect();
        let k = Kernel::Rbf { gamma };
        let g = DMatrix::from_fn(20, 20, |i, j| k.eval(&pts[i], &pts[j]));
        prop_assert_eq!(&g, &g.transpose());
        let min = g.symmetric_eigenvalues().min();
        prop_assert!(min >= -1e-8);
    }

    #[test]
    fn duals_stay_in_box(seed in 0u64..10_000, c in 0.05f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = 30;
        let x: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)]).collect();
        let y: Vec<i8> = (0..n).map(|i| if (x[i][0] + 0.3 * rng.random_range(-1.0..1.0)) > 0.0 { 1 } else { -1 }).collect();
        let prob = DualProblem { kernel: Kernel::Rbf { gamma: 1.0 }, data: x.concat(), dim: 2, p: vec![-1.0; n], y: y.clone(), c, point: (0..n).collect() };
        let sol = solve_dual(&prob, SolverSettings { tolerance: 1e-3, max_iterations: 100_000 });
        prop_assert!(sol.converged);
        prop_assert!(sol.kkt_gap <= 1e-3);
        prop_assert!(sol.alpha.iter().all(|&a| (0.0..=c).contains(&a)));
        let eq: f64 = sol.alpha.iter().zip(&y).map(|(a, y)| a * f64::from(*y)).sum();
        prop_assert!(eq.abs() < 1e-8);
    }
}
