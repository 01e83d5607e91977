#![allow(dead_code)]

use netude::dynamics::Trajectory;
use netude::model::{MlpSpec, UdeModel, DEFAULT_EPSILON};
use netude::training::{make_windows, Split, WindowedDataset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Model with random weights and random adjacency logits.
pub fn random_model(n: usize, seed: u64) -> UdeModel {
    let mut m = UdeModel::init(
        n,
        MlpSpec::nodal_default(),
        MlpSpec::coupling_default(),
        DEFAULT_EPSILON,
        seed,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    for p in m.parameters_mut() {
        for v in p.iter_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
    m
}

/// Windows cut from a random trajectory of `len` samples.
pub fn random_windows(n: usize, n_f: usize, len: usize, seed: u64) -> WindowedDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let states = (0..len * n * 2).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let traj = Trajectory::new(0.1, n, 2, states).unwrap();
    make_windows(&traj, n_f, Split::Train).unwrap()
}

pub fn with_params(model: &UdeModel, params: &[Vec<f64>]) -> UdeModel {
    let mut m = model.clone();
    for (dst, src) in m.parameters_mut().into_iter().zip(params) {
        dst.clone_from(src);
    }
    m
}
