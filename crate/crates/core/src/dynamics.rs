//! Ground-truth generators: the coupled Liénard-type oscillator network, the
//! Kuramoto phase model, and a plain RK4 integrator.
//!
//! States are flat `N x d` row-major slices: node `i` occupies
//! `state[i * d..(i + 1) * d]`. For the oscillator `d = 2` with ordering `(x, v)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Any `|value|` above this during [`simulate`] is treated as a blow-up.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OscillatorParams {
    /// `a1..a4` of the nodal damping polynomial.
    pub a: [f64; 4],
    /// Gain on the coupling sum.
    pub mu: f64,
    /// `+1` reproduces `+sum A_ij (v_i - v_j)`; `-1` gives the diffusive form.
    pub coupling_sign: f64,
}

impl Default for OscillatorParams {
    fn default() -> Self {
        Self {
            a: [0.2, 11.0, 11.0, 1.0],
            mu: 0.2,
            coupling_sign: 1.0,
        }
    }
}

impl OscillatorParams {
    pub fn validate(&self) -> Result<()> {
        if self.coupling_sign != 1.0 && self.coupling_sign != -1.0 {
            return invalid(format!(
                "coupling_sign must be +1 or -1, got {}",
                self.coupling_sign
            ));
        }
        if !self.a.iter().chain([&self.mu]).all(|v| v.is_finite()) {
            return invalid("oscillator parameters must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KuramotoParams {
    /// Natural frequency per node.
    pub omega: Vec<f64>,
    /// Global coupling strength.
    pub k: f64,
}

/// Directed `n x n` weight matrix, row `i` lists the sources feeding node `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjacencyMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl AdjacencyMatrix {
    pub fn new(n: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != n * n {
            return invalid(format!(
                "adjacency of size {n} needs {} entries, got {}",
                n * n,
                entries.len()
            ));
        }
        if !entries.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("adjacency entries".into()));
        }
        Ok(Self { n, entries })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if let Some(r) = rows.iter().find(|r| r.len() != n) {
            return invalid(format!(
                "adjacency rows must have length {n}, found one of length {}",
                r.len()
            ));
        }
        Self::new(n, rows.concat())
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![0.0; n * n],
        }
    }

    /// Every off-diagonal entry set to one.
    pub fn complete(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    m.entries[i * n + j] = 1.0;
                }
            }
        }
        m
    }

    /// Directed 3-cycle `0 <- 1 <- 2 <- 0` used as the small fixture network.
    pub fn cycle3() -> Self {
        Self::from_rows(&[
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![1.0, 0.0, 0.0],
        ])
        .expect("fixture is well formed")
    }

    /// 11-node fixture, identical to `random_adjacency(11, 0.2, 7)`.
    pub fn sparse11() -> Self {
        const ONES: [(usize, usize); SPARSE11_EDGES] = SPARSE11;
        let mut m = Self::zeros(11);
        for (i, j) in ONES {
            m.entries[i * 11 + j] = 1.0;
        }
        m
    }

    pub fn fixture(name: &str) -> Result<Self> {
        match name {
            "cycle3" => Ok(Self::cycle3()),
            "sparse11" => Ok(Self::sparse11()),
            other => invalid(format!(
                "unknown adjacency fixture `{other}` (expected `cycle3` or `sparse11`)"
            )),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[i * self.n + j]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries
            .chunks(self.n.max(1))
            .map(<[f64]>::to_vec)
            .collect()
    }

    pub fn is_binary(&self) -> bool {
        self.entries.iter().all(|&v| v == 0.0 || v == 1.0)
    }

    pub fn has_zero_diagonal(&self) -> bool {
        (0..self.n).all(|i| self.get(i, i) == 0.0)
    }

    /// Number of entries equal to one.
    pub fn count_ones(&self) -> usize {
        self.entries.iter().filter(|&&v| v == 1.0).count()
    }

    /// Number of differing entries.
    pub fn hamming(&self, other: &Self) -> Result<usize> {
        if self.n != other.n {
            return invalid(format!(
                "cannot compare {0}x{0} and {1}x{1} adjacency matrices",
                self.n, other.n
            ));
        }
        Ok(self
            .entries
            .iter()
            .zip(&other.entries)
            .filter(|(a, b)| a != b)
            .count())
    }

    pub(crate) fn require_binary(&self) -> Result<()> {
        if !self.is_binary() || !self.has_zero_diagonal() {
            return invalid("adjacency must be binary with a zero diagonal");
        }
        Ok(())
    }
}

const SPARSE11_EDGES: usize = 23;
const SPARSE11: [(usize, usize); SPARSE11_EDGES] = [
    (0, 1),
    (0, 2),
    (0, 7),
    (1, 8),
    (2, 3),
    (2, 4),
    (2, 8),
    (2, 9),
    (3, 8),
    (4, 8),
    (5, 1),
    (5, 4),
    (5, 10),
    (6, 8),
    (7, 1),
    (7, 6),
    (7, 10),
    (8, 0),
    (8, 1),
    (8, 7),
    (9, 10),
    (10, 7),
    (10, 9),
];

/// Binary, zero-diagonal, directed matrix with each off-diagonal entry set
/// independently with probability `density`.
pub fn random_adjacency(n: usize, density: f64, seed: u64) -> Result<AdjacencyMatrix> {
    if n < 2 {
        return invalid(format!("random adjacency needs n >= 2, got {n}"));
    }
    if !(density > 0.0 && density < 1.0) {
        return invalid(format!("density must lie in (0, 1), got {density}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = AdjacencyMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if i != j && rng.gen::<f64>() < density {
                m.entries[i * n + j] = 1.0;
            }
        }
    }
    Ok(m)
}

/// Uniform `[-1, 1]` initial state for `n` nodes of dimension `node_dim`.
pub fn random_initial_condition(n: usize, node_dim: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n * node_dim)
        .map(|_| rng.gen_range(-1.0..=1.0))
        .collect()
}

fn check_nodes(state_len: usize, node_dim: usize, a: &AdjacencyMatrix) -> Result<usize> {
    if state_len != a.n() * node_dim {
        return invalid(format!(
            "state of length {state_len} does not match {} nodes of dimension {node_dim}",
            a.n()
        ));
    }
    Ok(a.n())
}

/// Right-hand side of the coupled oscillator network:
/// `dx_i = v_i`,
/// `dv_i = -x_i - a1 v_i (a2 x_i^4 - a3 x_i + a4) + sign * mu * sum_j A_ij (v_i - v_j)`.
pub fn oscillator_rhs(
    state: &[f64],
    a: &AdjacencyMatrix,
    p: &OscillatorParams,
) -> Result<Vec<f64>> {
    let n = check_nodes(state.len(), 2, a)?;
    let [a1, a2, a3, a4] = p.a;
    let gain = p.coupling_sign * p.mu;
    let mut out = vec![0.0; 2 * n];
    for i in 0..n {
        let (x, v) = (state[2 * i], state[2 * i + 1]);
        let mut coupling = 0.0;
        for j in 0..n {
            let w = a.get(i, j);
            if w != 0.0 {
                coupling += w * (v - state[2 * j + 1]);
            }
        }
        out[2 * i] = v;
        out[2 * i + 1] = -x - a1 * v * (a2 * x.powi(4) - a3 * x + a4) + gain * coupling;
    }
    Ok(out)
}

/// `dtheta_i = omega_i + (K / N) sum_j A_ij sin(theta_i - theta_j)`.
pub fn kuramoto_rhs(theta: &[f64], a: &AdjacencyMatrix, p: &KuramotoParams) -> Result<Vec<f64>> {
    let n = check_nodes(theta.len(), 1, a)?;
    if p.omega.len() != n {
        return invalid(format!(
            "{} natural frequencies supplied for {n} nodes",
            p.omega.len()
        ));
    }
    let c = p.k / n as f64;
    Ok((0..n)
        .map(|i| {
            let s: f64 = (0..n)
                .map(|j| a.get(i, j) * (theta[i] - theta[j]).sin())
                .sum();
            p.omega[i] + c * s
        })
        .collect())
}

/// One classical RK4 step.
pub fn rk4_step<F>(rhs: F, state: &[f64], dt: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if !(dt > 0.0) {
        return invalid(format!("dt must be positive, got {dt}"));
    }
    let stage = |k: Result<Vec<f64>>, idx: usize| -> Result<Vec<f64>> {
        let k = k?;
        if k.len() != state.len() {
            return invalid(format!(
                "rhs returned {} values for a state of length {}",
                k.len(),
                state.len()
            ));
        }
        if k.iter().all(|v| v.is_finite()) {
            Ok(k)
        } else {
            Err(Error::Rk4Stage { stage: idx })
        }
    };
    let axpy =
        |k: &[f64], h: f64| -> Vec<f64> { state.iter().zip(k).map(|(x, k)| x + h * k).collect() };
    let k1 = stage(rhs(state), 1)?;
    let k2 = stage(rhs(&axpy(&k1, 0.5 * dt)), 2)?;
    let k3 = stage(rhs(&axpy(&k2, 0.5 * dt)), 3)?;
    let k4 = stage(rhs(&axpy(&k3, dt)), 4)?;
    let h = dt / 6.0;
    Ok((0..state.len())
        .map(|i| state[i] + h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect())
}

/// Uniformly sampled sequence of `T x N x d` states.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    dt: f64,
    n_nodes: usize,
    node_dim: usize,
    states: Vec<f64>,
}

impl Trajectory {
    pub fn new(dt: f64, n_nodes: usize, node_dim: usize, states: Vec<f64>) -> Result<Self> {
        let width = n_nodes * node_dim;
        if !(dt > 0.0) {
            return invalid(format!("trajectory dt must be positive, got {dt}"));
        }
        if width == 0 || states.len() % width != 0 || states.is_empty() {
            return invalid(format!(
                "{} values cannot be split into states of {n_nodes} x {node_dim}",
                states.len()
            ));
        }
        Ok(Self {
            dt,
            n_nodes,
            node_dim,
            states,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn node_dim(&self) -> usize {
        self.node_dim
    }

    pub fn state_len(&self) -> usize {
        self.n_nodes * self.node_dim
    }

    /// Number of samples `T`.
    pub fn len(&self) -> usize {
        self.states.len() / self.state_len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn state(&self, k: usize) -> &[f64] {
        let w = self.state_len();
        &self.states[k * w..(k + 1) * w]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.states.chunks_exact(self.state_len())
    }

    /// Samples `range`, re-based to start at `t = 0`.
    pub fn slice(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return invalid(format!(
                "slice {range:?} out of bounds for trajectory of length {}",
                self.len()
            ));
        }
        let w = self.state_len();
        Self::new(
            self.dt,
            self.n_nodes,
            self.node_dim,
            self.states[range.start * w..range.end * w].to_vec(),
        )
    }

    /// Appends `other` in time.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.dt != other.dt || self.n_nodes != other.n_nodes || self.node_dim != other.node_dim {
            return invalid("cannot concatenate trajectories with different layouts");
        }
        let mut states = self.states.clone();
        states.extend_from_slice(&other.states);
        Self::new(self.dt, self.n_nodes, self.node_dim, states)
    }

    /// Per node, `max |component|` over samples `from..`.
    pub fn max_abs(&self, component: usize, from: usize) -> Vec<f64> {
        let d = self.node_dim;
        let mut out = vec![0.0_f64; self.n_nodes];
        for s in self.iter().skip(from) {
            for (i, m) in out.iter_mut().enumerate() {
                *m = m.max(s[i * d + component].abs());
            }
        }
        out
    }
}

/// Integrates `steps` RK4 steps from `x0`; the result holds `steps + 1` samples.
pub fn simulate<F>(rhs: F, x0: &[f64], node_dim: usize, steps: usize, dt: f64) -> Result<Trajectory>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    if steps == 0 {
        return invalid("simulate needs at least one step");
    }
    if node_dim == 0 || x0.len() % node_dim != 0 {
        return invalid(format!(
            "initial state of length {} is not a whole number of nodes of dimension {node_dim}",
            x0.len()
        ));
    }
    if !x0.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("initial condition".into()));
    }
    let mut states = Vec::with_capacity(x0.len() * (steps + 1));
    states.extend_from_slice(x0);
    let mut x = x0.to_vec();
    for step in 1..=steps {
        x = rk4_step(&rhs, &x, dt).map_err(|e| match e {
            Error::Rk4Stage { .. } => Error::Diverged {
                step,
                limit: DIVERGENCE_LIMIT,
            },
            other => other,
        })?;
        if x.iter().any(|v| v.abs() > DIVERGENCE_LIMIT) {
            return Err(Error::Diverged {
                step,
                limit: DIVERGENCE_LIMIT,
            });
        }
        states.extend_from_slice(&x);
    }
    Trajectory::new(dt, x0.len() / node_dim, node_dim, states)
}

/// Empirical order of convergence from a Richardson triplet: endpoints at
/// `dt`, `dt/2`, `dt/4` over `[0, t_end]`, order `log2(|e_1| / |e_2|)`.
pub fn richardson_order<F>(rhs: F, x0: &[f64], node_dim: usize, t_end: f64, dt: f64) -> Result<f64>
where
    F: Fn(&[f64]) -> Result<Vec<f64>>,
{
    let endpoint = |h: f64| -> Result<Vec<f64>> {
        let steps = (t_end / h).round() as usize;
        let traj = simulate(&rhs, x0, node_dim, steps, h)?;
        Ok(traj.state(traj.len() - 1).to_vec())
    };
    let coarse = endpoint(dt)?;
    let mid = endpoint(dt / 2.0)?;
    let fine = endpoint(dt / 4.0)?;
    let dist = |a: &[f64], b: &[f64]| -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    Ok((dist(&coarse, &mid) / dist(&mid, &fine)).log2())
}
