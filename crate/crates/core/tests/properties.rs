mod common;

use common::{random_model, random_windows};
use netude::autodiff::Tape;
use netude::dynamics::{
    oscillator_rhs, random_adjacency, random_initial_condition, simulate, AdjacencyMatrix,
    OscillatorParams,
};
use netude::io::{read_trajectory, write_trajectory, SystemSpec, TrajectoryMeta};
use netude::model::threshold_adjacency;
use netude::tensor::Tensor;
use netude::training::{loss, loss_and_gradient, loss_on_tape};
use proptest::prelude::*;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn penalty_decomposes_exactly(seed in 0u64..1000, n in 2usize..5, alpha in 0.0f64..1.0) {
        let m = random_model(n, seed);
        let data = random_windows(n, 2, 6, seed);
        let l1: f64 = m.soft_adjacency().iter().map(|v| v.abs()).sum();
        let diff = loss(&m, &data, alpha).unwrap() - loss(&m, &data, 0.0).unwrap();
        prop_assert!((diff - alpha * l1).abs() <= 1e-12, "{} vs {}", diff, alpha * l1);
    }

    #[test]
    fn backward_is_linear(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let m = random_model(3, seed);
        let data = random_windows(3, 2, 6, seed + 1);
        let grads = |wa: f64, wb: f64| -> Vec<f64> {
            let mut tape = Tape::new();
            let bound = m.bind(&mut tape, true, None).unwrap();
            let t1 = loss_on_tape(&mut tape, &bound, &data, &[0, 1], 0.0).unwrap();
            let t2 = loss_on_tape(&mut tape, &bound, &data, &[2], 0.5).unwrap();
            let s1 = tape.scale(t1.total, wa);
            let s2 = tape.scale(t2.total, wb);
            let root = tape.add(s1, s2).unwrap();
            let g = tape.backward(root).unwrap();
            bound.parameter_vars().into_iter().flat_map(|v| g[v].data().to_vec()).collect()
        };
        let (g1, g2, gab) = (grads(1.0, 0.0), grads(0.0, 1.0), grads(a, b));
        for k in 0..gab.len() {
            prop_assert!(close(gab[k], a * g1[k] + b * g2[k], 1e-12), "entry {}", k);
        }
    }

    #[test]
    fn loss_and_gradient_are_deterministic(seed in 0u64..1000) {
        let m = random_model(3, seed);
        let data = random_windows(3, 5, 9, seed);
        let idx: Vec<usize> = (0..data.len()).collect();
        let a = loss_and_gradient(&m, &data, &idx, 1e-5).unwrap();
        let b = loss_and_gradient(&m, &data, &idx, 1e-5).unwrap();
        prop_assert_eq!(a.loss.to_bits(), b.loss.to_bits());
        prop_assert_eq!(a.gradient, b.gradient);
    }

    #[test]
    fn soft_adjacency_range_and_threshold(seed in 0u64..1000, n in 2usize..8) {
        let m = random_model(n, seed);
        let soft = m.soft_adjacency();
        for i in 0..n {
            for j in 0..n {
                let v = soft[i * n + j];
                if i == j {
                    prop_assert!(v < 1e-40);
                } else {
                    prop_assert!(v > 0.0 && v < 1.0);
                }
            }
        }
        let hard = threshold_adjacency(n, &soft).unwrap();
        prop_assert!(hard.is_binary() && hard.has_zero_diagonal());
        prop_assert_eq!(threshold_adjacency(n, hard.entries()).unwrap(), hard);
    }

    #[test]
    fn self_loops_never_contribute(seed in 0u64..1000, n in 2usize..6, diag in -5.0f64..5.0) {
        let m = random_model(n, seed);
        let state = random_initial_condition(n, 2, seed);
        let mut w = random_adjacency(n, 0.5, seed).unwrap().entries().to_vec();
        let base = m.rhs_with(&state, &w).unwrap();
        for i in 0..n {
            w[i * n + i] = diag;
        }
        prop_assert_eq!(base, m.rhs_with(&state, &w).unwrap());
    }

    #[test]
    fn missing_edges_decouple_nodes(seed in 0u64..1000) {
        let m = random_model(3, seed);
        let a = AdjacencyMatrix::from_rows(&[vec![0.0, 1.0, 0.0], vec![0.0; 3], vec![0.0; 3]]).unwrap();
        let s = random_initial_condition(3, 2, seed);
        let mut kicked = s.clone();
        kicked[4] += 0.7;
        let (r0, r1) = (m.rhs_with(&s, a.entries()).unwrap(), m.rhs_with(&kicked, a.entries()).unwrap());
        prop_assert_eq!(&r0[..4], &r1[..4]);
        let p = OscillatorParams::default();
        let (t0, t1) = (oscillator_rhs(&s, &a, &p).unwrap(), oscillator_rhs(&kicked, &a, &p).unwrap());
        prop_assert_eq!(&t0[..4], &t1[..4]);
    }

    #[test]
    fn trajectory_csv_round_trips(seed in 0u64..1000, steps in 1usize..40) {
        let a = random_adjacency(4, 0.3, seed).unwrap();
        let p = OscillatorParams::default();
        let x0 = random_initial_condition(4, 2, seed);
        let traj = simulate(|s: &[f64]| oscillator_rhs(s, &a, &p), &x0, 2, steps, 0.1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let meta = TrajectoryMeta {
            dt: 0.1,
            n_nodes: 4,
            node_dim: 2,
            samples: traj.len(),
            system: SystemSpec::Oscillator(p),
            adjacency: a,
            seed,
            config_hash: Some("abc".into()),
        };
        let (csv, js) = (dir.path().join("t.csv"), dir.path().join("t.json"));
        write_trajectory(&csv, &js, &traj, &meta).unwrap();
        prop_assert_eq!(read_trajectory(&csv, &meta).unwrap(), traj);
    }
}

#[test]
fn tensor_constants_do_not_receive_gradients() {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::from_vec(vec![1.0, 2.0])).unwrap();
    let x = tape.leaf(Tensor::from_vec(vec![3.0, 4.0]), true).unwrap();
    let y = tape.mul(c, x).unwrap();
    let root = tape.sum(y);
    let g = tape.backward(root).unwrap();
    assert_eq!(g[x].data(), &[1.0, 2.0]);
    assert!(g.get(c).is_none());
}
