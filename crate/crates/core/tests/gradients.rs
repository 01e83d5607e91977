mod common;

use common::{random_model, random_windows, with_params};
use netude::autodiff::{gradcheck, Tape};
use netude::dynamics::AdjacencyMatrix;
use netude::model::{rollout, threshold_adjacency, MlpSpec, UdeModel};
use netude::tensor::Tensor;
use netude::training::{loss, loss_and_gradient};

fn check_model(n: usize, n_f: usize, alpha: f64, seed: u64) {
    let model = random_model(n, seed);
    let data = random_windows(n, n_f, n_f + 3, seed + 100);
    let all: Vec<usize> = (0..data.len()).collect();
    let eval = loss_and_gradient(&model, &data, &all, alpha).unwrap();
    let params: Vec<Vec<f64>> = model.parameters().into_iter().cloned().collect();
    let analytic: Vec<Vec<f64>> = eval.gradient.iter().map(|t| t.data().to_vec()).collect();
    let report = gradcheck(&params, &analytic, 1e-6, 1e-5, 1e-8, |p| {
        loss(&with_params(&model, p), &data, alpha)
    })
    .unwrap();
    assert!(report.passed(), "n={n} n_f={n_f} seed={seed}: {report:?}");
}

#[test]
fn loss_gradient_matches_finite_differences() {
    for seed in 0..4 {
        check_model(2, 1, 0.0, seed);
        check_model(3, 5, 1e-2, seed);
    }
}

#[test]
fn rollout_gradient_through_override_adjacency() {
    let model = random_model(3, 11);
    let a = AdjacencyMatrix::cycle3();
    let x0 = vec![0.3, -0.2, -0.5, 0.1, 0.8, 0.4];
    let f = |m: &UdeModel| -> (f64, Vec<Vec<f64>>) {
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, true, Some(&a)).unwrap();
        let x = tape
            .constant(Tensor::new(vec![3, 2], x0.clone()).unwrap())
            .unwrap();
        let states = rollout(&mut tape, &bound, x, 4, 0.1).unwrap();
        let sq = tape.square(*states.last().unwrap());
        let root = tape.sum(sq);
        let value = tape.value(root).data()[0];
        let grads = tape.backward(root).unwrap();
        let g = bound
            .parameter_vars()
            .into_iter()
            .map(|v| grads[v].data().to_vec())
            .collect();
        (value, g)
    };
    let (_, analytic) = f(&model);
    // the logits are disconnected from the loss when the adjacency is overridden
    assert!(analytic.last().unwrap().iter().all(|&g| g == 0.0));
    let params: Vec<Vec<f64>> = model.parameters().into_iter().cloned().collect();
    let report = gradcheck(&params, &analytic, 1e-6, 1e-5, 1e-8, |p| {
        Ok(f(&with_params(&model, p)).0)
    })
    .unwrap();
    assert!(report.passed(), "{report:?}");
}

#[test]
fn penalty_gradient_is_sigmoid_derivative() {
    let model = UdeModel::init(
        3,
        MlpSpec::nodal_default(),
        MlpSpec::coupling_default(),
        0.01,
        0,
    )
    .unwrap();
    let data = random_windows(3, 1, 4, 0);
    let all: Vec<usize> = (0..data.len()).collect();
    let g0 = loss_and_gradient(&model, &data, &all, 0.0).unwrap();
    let g1 = loss_and_gradient(&model, &data, &all, 1.0).unwrap();
    let (l0, l1) = (g0.gradient.last().unwrap(), g1.gradient.last().unwrap());
    for i in 0..3 {
        for j in 0..3 {
            let k = i * 3 + j;
            let d = l1.data()[k] - l0.data()[k];
            let expect = if i == j { 0.0 } else { 0.25 };
            assert!((d - expect).abs() < 1e-12, "{i},{j}: {d}");
        }
    }
    assert_eq!(
        threshold_adjacency(3, &model.soft_adjacency()).unwrap(),
        AdjacencyMatrix::complete(3)
    );
}
