//! The universal differential equation surrogate.
//!
//! For node `i` with state `(x_i, v_i)`:
//!
//! ```text
//! dx_i/dt = v_i
//! dv_i/dt = nodal(x_i, v_i) + sum_{j != i} A_ij coupling(x_i, v_i, x_j, v_j)
//! A       = sigmoid(reshape(logits) - I / eps)
//! ```
//!
//! `nodal` and `coupling` are small LeakyReLU feed-forward networks shared by
//! all nodes and all edges. The model exists in two forms: plain parameters
//! ([`UdeModel`]) for storage and fast open-loop simulation, and a
//! [`BoundModel`] whose parameters live on a [`Tape`] for training.

use std::cell::RefCell;
use std::path::Path;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{leaky_relu, sigmoid, Tape, Var};
use crate::dynamics::AdjacencyMatrix;
use crate::error::{invalid, Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 0.01;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.01;

/// Layer widths from input to output; hidden layers use LeakyReLU, the output layer is linear.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub leaky_slope: f64,
}

impl MlpSpec {
    /// `(x, v) -> 50 -> 50 -> 1`.
    pub fn nodal_default() -> Self {
        Self {
            layer_widths: vec![2, 50, 50, 1],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// `(x_i, v_i, x_j, v_j) -> 4 -> 1`.
    pub fn coupling_default() -> Self {
        Self {
            layer_widths: vec![4, 4, 1],
            leaky_slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    fn validate(&self, role: &str, input: usize) -> Result<()> {
        let w = &self.layer_widths;
        if w.len() < 2 || w.contains(&0) {
            return invalid(format!(
                "{role} network widths {w:?} need at least two non-zero layers"
            ));
        }
        if w[0] != input || *w.last().unwrap() != 1 {
            return invalid(format!(
                "{role} network must map {input} inputs to 1 output, got widths {w:?}"
            ));
        }
        if !self.leaky_slope.is_finite() {
            return invalid(format!("{role} network leaky slope must be finite"));
        }
        Ok(())
    }
}

/// Dense layer, `weight` is `fan_out x fan_in` row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub fan_in: usize,
    pub fan_out: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
}

impl MlpParams {
    fn init(spec: &MlpSpec, rng: &mut ChaCha8Rng) -> Self {
        let layers = spec
            .layer_widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                DenseLayer {
                    fan_in,
                    fan_out,
                    weight: (0..fan_in * fan_out)
                        .map(|_| rng.gen_range(-bound..=bound))
                        .collect(),
                    bias: vec![0.0; fan_out],
                }
            })
            .collect();
        Self { layers }
    }

    fn matches(&self, spec: &MlpSpec) -> bool {
        self.layers.len() + 1 == spec.layer_widths.len()
            && self
                .layers
                .iter()
                .zip(spec.layer_widths.windows(2))
                .all(|(l, w)| {
                    l.fan_in == w[0]
                        && l.fan_out == w[1]
                        && l.weight.len() == w[0] * w[1]
                        && l.bias.len() == w[1]
                })
    }

    /// Scalar output for one input vector.
    pub fn forward(&self, input: &[f64], slope: f64) -> f64 {
        let mut h = input.to_vec();
        let last = self.layers.len() - 1;
        for (k, layer) in self.layers.iter().enumerate() {
            let mut next = layer.bias.clone();
            for (o, out) in next.iter_mut().enumerate() {
                let row = &layer.weight[o * layer.fan_in..(o + 1) * layer.fan_in];
                *out += row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>();
            }
            if k < last {
                next.iter_mut().for_each(|v| *v = leaky_relu(*v, slope));
            }
            h = next;
        }
        h[0]
    }

    fn zero(&mut self) {
        for l in &mut self.layers {
            l.weight.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }
}

/// Learnable adjacency: `logits` is the row-major flattening of an `n x n` matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyParams {
    pub logits: Vec<f64>,
    pub epsilon: f64,
}

impl AdjacencyParams {
    /// `sigmoid(logits - I / eps)` evaluated without a tape.
    pub fn soft(&self, n: usize) -> Result<Vec<f64>> {
        if self.logits.len() != n * n {
            return invalid(format!(
                "adjacency logits have length {}, expected {}",
                self.logits.len(),
                n * n
            ));
        }
        Ok(self
            .logits
            .iter()
            .enumerate()
            .map(|(k, &z)| {
                let diag = if k / n == k % n {
                    1.0 / self.epsilon
                } else {
                    0.0
                };
                sigmoid(z - diag)
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UdeModel {
    pub n: usize,
    pub node_dim: usize,
    pub nodal_spec: MlpSpec,
    pub coupling_spec: MlpSpec,
    pub nodal: MlpParams,
    pub coupling: MlpParams,
    pub adjacency: AdjacencyParams,
}

impl UdeModel {
    /// Seeded initialisation: weights uniform in `±1/sqrt(fan_in)`, zero biases,
    /// zero adjacency logits (off-diagonal entries start at exactly 0.5).
    pub fn init(
        n: usize,
        nodal_spec: MlpSpec,
        coupling_spec: MlpSpec,
        epsilon: f64,
        seed: u64,
    ) -> Result<Self> {
        if n < 2 {
            return invalid(format!("model needs at least two nodes, got {n}"));
        }
        if !(epsilon > 0.0) {
            return invalid(format!("epsilon must be positive, got {epsilon}"));
        }
        nodal_spec.validate("nodal", 2)?;
        coupling_spec.validate("coupling", 4)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let nodal = MlpParams::init(&nodal_spec, &mut rng);
        let coupling = MlpParams::init(&coupling_spec, &mut rng);
        Ok(Self {
            n,
            node_dim: 2,
            nodal_spec,
            coupling_spec,
            nodal,
            coupling,
            adjacency: AdjacencyParams {
                logits: vec![0.0; n * n],
                epsilon,
            },
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.n < 2 || self.node_dim != 2 {
            return invalid("model must have n >= 2 nodes of dimension 2");
        }
        self.nodal_spec.validate("nodal", 2)?;
        self.coupling_spec.validate("coupling", 4)?;
        if !self.nodal.matches(&self.nodal_spec) || !self.coupling.matches(&self.coupling_spec) {
            return invalid("network parameters do not match their layer widths");
        }
        if !(self.adjacency.epsilon > 0.0) {
            return invalid("epsilon must be positive");
        }
        self.adjacency.soft(self.n)?;
        if !self
            .parameters()
            .iter()
            .all(|p| p.iter().all(|v| v.is_finite()))
        {
            return Err(Error::NonFinite("model parameters".into()));
        }
        Ok(())
    }

    /// Parameter arrays in a fixed order: nodal layers (weight, bias), coupling
    /// layers (weight, bias), adjacency logits.
    pub fn parameters(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        for l in self.nodal.layers.iter().chain(&self.coupling.layers) {
            out.push(&l.weight);
            out.push(&l.bias);
        }
        out.push(&self.adjacency.logits);
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = Vec::new();
        for l in self
            .nodal
            .layers
            .iter_mut()
            .chain(self.coupling.layers.iter_mut())
        {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.adjacency.logits);
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|p| p.len()).sum()
    }

    /// Zeroes both networks, leaving the adjacency logits untouched.
    pub fn zero_networks(&mut self) {
        self.nodal.zero();
        self.coupling.zero();
    }

    pub fn soft_adjacency(&self) -> Vec<f64> {
        self.adjacency
            .soft(self.n)
            .expect("logit length checked at construction")
    }

    /// Tape-free right-hand side for any node count, given an explicit weight matrix.
    pub fn rhs_with(&self, state: &[f64], weights: &[f64]) -> Result<Vec<f64>> {
        if state.len() % 2 != 0 || state.len() < 2 {
            return invalid(format!("state of length {} is not N x 2", state.len()));
        }
        let n = state.len() / 2;
        if weights.len() != n * n {
            return invalid(format!(
                "weight matrix has {} entries, expected {} for {n} nodes",
                weights.len(),
                n * n
            ));
        }
        let s1 = self.nodal_spec.leaky_slope;
        let s2 = self.coupling_spec.leaky_slope;
        let mut out = vec![0.0; 2 * n];
        let mut pair = [0.0; 4];
        for i in 0..n {
            let xi = &state[2 * i..2 * i + 2];
            let mut dv = self.nodal.forward(xi, s1);
            pair[..2].copy_from_slice(xi);
            for j in (0..n).filter(|&j| j != i) {
                let w = weights[i * n + j];
                if w == 0.0 {
                    continue;
                }
                pair[2..].copy_from_slice(&state[2 * j..2 * j + 2]);
                dv += w * self.coupling.forward(&pair, s2);
            }
            out[2 * i] = xi[1];
            out[2 * i + 1] = dv;
        }
        Ok(out)
    }

    /// Tape-free right-hand side using the learned soft adjacency.
    pub fn rhs(&self, state: &[f64]) -> Result<Vec<f64>> {
        if state.len() != 2 * self.n {
            return invalid(format!(
                "state of length {} does not match {} nodes",
                state.len(),
                self.n
            ));
        }
        self.rhs_with(state, &self.soft_adjacency())
    }

    /// Registers every parameter on `tape`. With `adjacency_override`, the
    /// soft adjacency is replaced by the given constant matrix.
    pub fn bind(
        &self,
        tape: &mut Tape,
        trainable: bool,
        adjacency_override: Option<&AdjacencyMatrix>,
    ) -> Result<BoundModel> {
        self.validate()?;
        let bind_mlp = |p: &MlpParams, tape: &mut Tape| -> Result<Vec<(Var, Var)>> {
            p.layers
                .iter()
                .map(|l| {
                    let w = tape.leaf(
                        Tensor::new(vec![l.fan_out, l.fan_in], l.weight.clone())?,
                        trainable,
                    )?;
                    let b = tape.leaf(Tensor::from_vec(l.bias.clone()), trainable)?;
                    Ok((w, b))
                })
                .collect()
        };
        let nodal = bind_mlp(&self.nodal, tape)?;
        let coupling = bind_mlp(&self.coupling, tape)?;
        let logits = tape.leaf(Tensor::from_vec(self.adjacency.logits.clone()), trainable)?;
        let adjacency = match adjacency_override {
            Some(a) => {
                if a.n() != self.n {
                    return invalid(format!(
                        "override adjacency is {0}x{0}, model has {1} nodes",
                        a.n(),
                        self.n
                    ));
                }
                tape.constant(Tensor::new(vec![self.n, self.n], a.entries().to_vec())?)?
            }
            None => adjacency_from_params(tape, logits, self.n, self.adjacency.epsilon)?,
        };
        Ok(BoundModel {
            n: self.n,
            nodal,
            coupling,
            logits,
            adjacency,
            nodal_slope: self.nodal_spec.leaky_slope,
            coupling_slope: self.coupling_spec.leaky_slope,
            pairs: RefCell::new(None),
        })
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

type PairIndex = (usize, Arc<[usize]>, Arc<[usize]>);

/// A [`UdeModel`] whose parameters are leaves on a tape.
#[derive(Debug)]
pub struct BoundModel {
    pub n: usize,
    pub nodal: Vec<(Var, Var)>,
    pub coupling: Vec<(Var, Var)>,
    pub logits: Var,
    /// The `n x n` adjacency used by the right-hand side.
    pub adjacency: Var,
    nodal_slope: f64,
    coupling_slope: f64,
    pairs: RefCell<Option<PairIndex>>,
}

impl BoundModel {
    /// Parameter handles in the same order as [`UdeModel::parameters`].
    pub fn parameter_vars(&self) -> Vec<Var> {
        let mut out: Vec<Var> = self
            .nodal
            .iter()
            .chain(&self.coupling)
            .flat_map(|&(w, b)| [w, b])
            .collect();
        out.push(self.logits);
        out
    }

    /// Row indices selecting `x_i` and `x_j` for every ordered pair `j != i` of every graph.
    fn pair_index(&self, batch: usize) -> (Arc<[usize]>, Arc<[usize]>) {
        let mut cache = self.pairs.borrow_mut();
        if let Some((b, src, dst)) = cache.as_ref() {
            if *b == batch {
                return (src.clone(), dst.clone());
            }
        }
        let n = self.n;
        let mut own = Vec::with_capacity(batch * n * (n - 1));
        let mut other = Vec::with_capacity(batch * n * (n - 1));
        for b in 0..batch {
            for i in 0..n {
                for j in (0..n).filter(|&j| j != i) {
                    own.push(b * n + i);
                    other.push(b * n + j);
                }
            }
        }
        let (own, other): (Arc<[usize]>, Arc<[usize]>) = (own.into(), other.into());
        *cache = Some((batch, own.clone(), other.clone()));
        (own, other)
    }
}

fn mlp_forward(tape: &mut Tape, layers: &[(Var, Var)], x: Var, slope: f64) -> Result<Var> {
    let mut h = x;
    for (k, &(w, b)) in layers.iter().enumerate() {
        h = tape.linear(h, w, b)?;
        if k + 1 < layers.len() {
            h = tape.leaky_relu(h, slope);
        }
    }
    Ok(h)
}

/// `sigmoid(reshape(logits, n x n) - I / eps)` on the tape.
pub fn adjacency_from_params(tape: &mut Tape, logits: Var, n: usize, epsilon: f64) -> Result<Var> {
    let len = tape.value(logits).len();
    if len != n * n {
        return invalid(format!(
            "adjacency logits have length {len}, expected {}",
            n * n
        ));
    }
    let square = tape.reshape(logits, &[n, n])?;
    let mut offset = Tensor::zeros(&[n, n]);
    for i in 0..n {
        offset.data_mut()[i * n + i] = -1.0 / epsilon;
    }
    let shifted = tape.add_const(square, &offset)?;
    Ok(tape.sigmoid(shifted))
}

/// Right-hand side for a batch of states stacked as `[batch * n, 2]`.
pub fn ude_rhs(tape: &mut Tape, model: &BoundModel, state: Var) -> Result<Var> {
    let shape = tape.value(state).shape().to_vec();
    let n = model.n;
    if shape.len() != 2 || shape[1] != 2 || shape[0] == 0 || shape[0] % n != 0 {
        return invalid(format!("state shape {shape:?} is not [batch * {n}, 2]"));
    }
    let batch = shape[0] / n;
    let nodal = mlp_forward(tape, &model.nodal, state, model.nodal_slope)?;

    let (own, other) = model.pair_index(batch);
    let xi = tape.gather_rows(state, own)?;
    let xj = tape.gather_rows(state, other)?;
    let pairs = tape.concat_cols(xi, xj)?;
    let edge = mlp_forward(tape, &model.coupling, pairs, model.coupling_slope)?;
    let coupled = tape.pair_aggregate(edge, model.adjacency, n)?;

    let dv = tape.add(nodal, coupled)?;
    let v = tape.select_col(state, 1)?;
    tape.concat_cols(v, dv)
}

/// One RK4 step of [`ude_rhs`] recorded on the tape.
pub fn rk4_step_tape(tape: &mut Tape, model: &BoundModel, state: Var, dt: f64) -> Result<Var> {
    let k1 = ude_rhs(tape, model, state)?;
    let h1 = tape.scale(k1, 0.5 * dt);
    let s2 = tape.add(state, h1)?;
    let k2 = ude_rhs(tape, model, s2)?;
    let h2 = tape.scale(k2, 0.5 * dt);
    let s3 = tape.add(state, h2)?;
    let k3 = ude_rhs(tape, model, s3)?;
    let h3 = tape.scale(k3, dt);
    let s4 = tape.add(state, h3)?;
    let k4 = ude_rhs(tape, model, s4)?;

    let k2x2 = tape.scale(k2, 2.0);
    let k3x2 = tape.scale(k3, 2.0);
    let a = tape.add(k1, k2x2)?;
    let b = tape.add(k3x2, k4)?;
    let incr = tape.add(a, b)?;
    let incr = tape.scale(incr, dt / 6.0);
    tape.add(state, incr)
}

/// `n_steps` differentiable RK4 steps from `x0`; returns the states after each step.
pub fn rollout(
    tape: &mut Tape,
    model: &BoundModel,
    x0: Var,
    n_steps: usize,
    dt: f64,
) -> Result<Vec<Var>> {
    if n_steps == 0 {
        return invalid("rollout needs at least one step");
    }
    if !(dt > 0.0) {
        return invalid(format!("dt must be positive, got {dt}"));
    }
    let mut out = Vec::with_capacity(n_steps);
    let mut s = x0;
    for step in 1..=n_steps {
        s = rk4_step_tape(tape, model, s, dt)?;
        if !tape.value(s).is_finite() {
            return Err(Error::NonFinite(format!("rollout state at step {step}")));
        }
        out.push(s);
    }
    Ok(out)
}

/// Rounds each entry to the nearest integer (ties go to 1) and clears the diagonal.
pub fn threshold_adjacency(n: usize, soft: &[f64]) -> Result<AdjacencyMatrix> {
    if soft.len() != n * n {
        return invalid(format!(
            "{} entries cannot form a {n}x{n} matrix",
            soft.len()
        ));
    }
    let entries = soft
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            if k / n == k % n {
                0.0
            } else if v >= 0.5 {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    AdjacencyMatrix::new(n, entries)
}

/// Model plus the run settings that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model: UdeModel,
    pub seed: u64,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub alpha: f64,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub lr: f64,
    pub n_f: usize,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Self = serde_json::from_str(&text)?;
        ckpt.model.validate()?;
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(n: usize, seed: u64) -> UdeModel {
        UdeModel::init(
            n,
            MlpSpec::nodal_default(),
            MlpSpec::coupling_default(),
            DEFAULT_EPSILON,
            seed,
        )
        .unwrap()
    }

    #[test]
    fn init_adjacency_is_half_off_diagonal() {
        let m = small(3, 0);
        let a = m.soft_adjacency();
        for i in 0..3 {
            for j in 0..3 {
                if i == j {
                    assert!(a[i * 3 + j] < 1e-43 && a[i * 3 + j] > 0.0);
                } else {
                    assert_eq!(a[i * 3 + j], 0.5);
                }
            }
        }
    }

    #[test]
    fn init_is_seeded() {
        assert_eq!(small(4, 9), small(4, 9));
        assert_ne!(small(4, 9), small(4, 10));
        let m = small(2, 1);
        let l = &m.nodal.layers[0];
        let bound = 1.0 / 2f64.sqrt();
        assert!(l.weight.iter().all(|w| w.abs() <= bound));
        assert!(l.bias.iter().all(|&b| b == 0.0));
    }

    #[test]
    fn init_rejects_bad_arguments() {
        let (s1, s2) = (MlpSpec::nodal_default(), MlpSpec::coupling_default());
        assert!(UdeModel::init(1, s1.clone(), s2.clone(), 0.01, 0).is_err());
        assert!(UdeModel::init(3, s1.clone(), s2.clone(), 0.0, 0).is_err());
        assert!(UdeModel::init(3, s2.clone(), s1, 0.01, 0).is_err());
    }

    #[test]
    fn tape_adjacency_matches_plain() {
        let mut m = small(3, 0);
        m.adjacency.logits = vec![10.0, 10.0, -3.0, 0.2, 0.0, 10.0, 1.0, -1.0, 5.0];
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, true, None).unwrap();
        let a = tape.value(bound.adjacency).data().to_vec();
        assert_eq!(a, m.soft_adjacency());
        assert!((a[1] - 0.999_954_602_131_297_6).abs() < 1e-15);
        assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn adjacency_length_mismatch_rejected() {
        let mut tape = Tape::new();
        let logits = tape.leaf(Tensor::zeros(&[8]), true).unwrap();
        assert!(adjacency_from_params(&mut tape, logits, 3, 0.01).is_err());
    }

    #[test]
    fn zero_networks_give_pure_drift() {
        let mut m = small(3, 2);
        m.zero_networks();
        let state = [0.1, 0.4, -0.3, 1.1, 0.7, -0.2];
        let d = m.rhs(&state).unwrap();
        assert_eq!(d, vec![0.4, 0.0, 1.1, 0.0, -0.2, 0.0]);
    }

    #[test]
    fn tape_rhs_matches_plain_rhs() {
        let mut m = small(3, 5);
        m.adjacency.logits = (0..9).map(|k| (k as f64 - 4.0) * 0.7).collect();
        let states = [
            [0.1, 0.4, -0.3, 1.1, 0.7, -0.2],
            [0.9, -0.4, 0.0, 0.2, -0.6, 0.5],
        ];
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, false, None).unwrap();
        let x = tape
            .constant(Tensor::new(vec![6, 2], states.concat()).unwrap())
            .unwrap();
        let d = ude_rhs(&mut tape, &bound, x).unwrap();
        let got = tape.value(d).data();
        let expect = [m.rhs(&states[0]).unwrap(), m.rhs(&states[1]).unwrap()].concat();
        for (g, e) in got.iter().zip(&expect) {
            assert!((g - e).abs() < 1e-13, "{g} vs {e}");
        }
    }

    #[test]
    fn decoupled_when_adjacency_is_zero() {
        let m = small(2, 3);
        let zero = AdjacencyMatrix::zeros(2);
        let a = m.rhs_with(&[0.3, -0.1, 0.8, 0.5], zero.entries()).unwrap();
        let b = m.rhs_with(&[0.3, -0.1, -2.0, 0.0], zero.entries()).unwrap();
        assert_eq!(a[..2], b[..2]);
    }

    #[test]
    fn position_equation_is_exact() {
        let m = small(4, 8);
        let state: Vec<f64> = (0..8).map(|k| (k as f64 * 0.37).sin()).collect();
        let d = m.rhs(&state).unwrap();
        for i in 0..4 {
            assert_eq!(d[2 * i], state[2 * i + 1]);
        }
    }

    #[test]
    fn threshold_rules() {
        let a = threshold_adjacency(2, &[0.9, 0.49, 0.51, 0.7]).unwrap();
        assert_eq!(a.entries(), &[0.0, 0.0, 1.0, 0.0]);
        let init = small(3, 0).soft_adjacency();
        assert_eq!(
            threshold_adjacency(3, &init).unwrap(),
            AdjacencyMatrix::complete(3)
        );
        let cyc = AdjacencyMatrix::cycle3();
        assert_eq!(threshold_adjacency(3, cyc.entries()).unwrap(), cyc);
    }

    #[test]
    fn rollout_single_step_matches_rk4() {
        let m = small(3, 4);
        let x0 = [0.5, -0.5, 0.2, 0.1, -0.8, 0.3];
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, false, None).unwrap();
        let x = tape
            .constant(Tensor::new(vec![3, 2], x0.to_vec()).unwrap())
            .unwrap();
        let states = rollout(&mut tape, &bound, x, 1, 0.1).unwrap();
        let plain = crate::dynamics::rk4_step(|s: &[f64]| m.rhs(s), &x0, 0.1).unwrap();
        for (g, e) in tape.value(states[0]).data().iter().zip(&plain) {
            assert!((g - e).abs() < 1e-13);
        }
        assert!(rollout(&mut tape, &bound, x, 0, 0.1).is_err());
    }

    #[test]
    fn zero_network_rollout_drifts_linearly() {
        let mut m = small(2, 4);
        m.zero_networks();
        let x0 = [0.5, -0.5, 0.2, 0.1];
        let mut tape = Tape::new();
        let bound = m.bind(&mut tape, false, None).unwrap();
        let x = tape
            .constant(Tensor::new(vec![2, 2], x0.to_vec()).unwrap())
            .unwrap();
        let states = rollout(&mut tape, &bound, x, 3, 0.1).unwrap();
        let last = tape.value(states[2]).data();
        assert!((last[0] - (0.5 - 0.15)).abs() < 1e-14);
        assert_eq!(last[1], -0.5);
        assert!((last[2] - (0.2 + 0.03)).abs() < 1e-14);
        assert_eq!(last[3], 0.1);
    }

    #[test]
    fn checkpoint_roundtrip_is_exact() {
        let mut m = small(3, 11);
        m.adjacency.logits[1] = 0.1 + 0.2;
        let ckpt = Checkpoint {
            model: m,
            seed: 11,
            provenance: Provenance {
                alpha: 1e-5,
                epochs_phase1: 1000,
                epochs_phase2: 1000,
                lr: 0.02,
                n_f: 5,
                adam_beta1: 0.9,
                adam_beta2: 0.999,
                adam_eps: 1e-8,
                batch_size: 0,
            },
            config_hash: Some("abc".into()),
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
    }
}
