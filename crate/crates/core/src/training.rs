//! Windowed forecasting datasets, the sparsity-regularised loss, Adam, and the
//! two-phase training schedule with its `alpha` sweep.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::dynamics::{AdjacencyMatrix, Trajectory};
use crate::error::{invalid, Error, Result};
use crate::model::{
    rk4_step_tape, threshold_adjacency, BoundModel, Checkpoint, MlpSpec, Provenance, UdeModel,
    DEFAULT_EPSILON,
};
use crate::tensor::Tensor;

/// `alpha` grid of the reference sweep.
pub const DEFAULT_ALPHAS: [f64; 7] = [0.0, 1e-7, 1e-6, 1e-5, 1e-4, 1e-2, 1e-1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

/// Contiguous train/dev/test thirds of one trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Trajectory,
    pub dev: Trajectory,
    pub test: Trajectory,
}

impl Splits {
    pub fn get(&self, split: Split) -> &Trajectory {
        match split {
            Split::Train => &self.train,
            Split::Dev => &self.dev,
            Split::Test => &self.test,
        }
    }
}

/// Cuts at `floor(T/3)` and `floor(2T/3)`.
pub fn split_thirds(traj: &Trajectory, n_f: usize) -> Result<Splits> {
    let t = traj.len();
    if t < 3 * (n_f + 1) {
        return invalid(format!(
            "trajectory of length {t} is too short to split into thirds with horizon {n_f} (need {})",
            3 * (n_f + 1)
        ));
    }
    let (a, b) = (t / 3, 2 * t / 3);
    Ok(Splits {
        train: traj.slice(0..a)?,
        dev: traj.slice(a..b)?,
        test: traj.slice(b..t)?,
    })
}

/// One initial condition followed by `n_f` targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    pub start: usize,
    /// `(n_f + 1) x N x d` row-major.
    pub samples: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub split: Split,
    pub dt: f64,
    pub n_f: usize,
    pub n_nodes: usize,
    pub node_dim: usize,
    pub windows: Vec<Window>,
}

/// Stride-1 windows.
pub fn make_windows(segment: &Trajectory, n_f: usize, split: Split) -> Result<WindowedDataset> {
    make_windows_strided(segment, n_f, 1, split)
}

pub fn make_windows_strided(
    segment: &Trajectory,
    n_f: usize,
    stride: usize,
    split: Split,
) -> Result<WindowedDataset> {
    if n_f == 0 || stride == 0 {
        return invalid("window horizon and stride must be at least 1");
    }
    let len = segment.len();
    if len < n_f + 1 {
        return invalid(format!(
            "segment of length {len} is shorter than one window of {} samples",
            n_f + 1
        ));
    }
    let w = segment.state_len();
    let windows = (0..=len - n_f - 1)
        .step_by(stride)
        .map(|start| Window {
            start,
            samples: segment.states()[start * w..(start + n_f + 1) * w].to_vec(),
        })
        .collect();
    Ok(WindowedDataset {
        split,
        dt: segment.dt(),
        n_f,
        n_nodes: segment.n_nodes(),
        node_dim: segment.node_dim(),
        windows,
    })
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    fn state_len(&self) -> usize {
        self.n_nodes * self.node_dim
    }

    /// Stacks the selected windows: initial states as `[B * N, d]` and one
    /// `[B * N, d]` target per forecast step.
    pub fn batch_tensors(&self, indices: &[usize]) -> Result<(Tensor, Vec<Tensor>)> {
        let w = self.state_len();
        let rows = indices.len() * self.n_nodes;
        let shape = vec![rows, self.node_dim];
        let gather = |k: usize| -> Vec<f64> {
            let mut out = Vec::with_capacity(rows * self.node_dim);
            for &i in indices {
                out.extend_from_slice(&self.windows[i].samples[k * w..(k + 1) * w]);
            }
            out
        };
        let x0 = Tensor::new(shape.clone(), gather(0))?;
        let targets = (1..=self.n_f)
            .map(|k| Tensor::new(shape.clone(), gather(k)))
            .collect::<Result<_>>()?;
        Ok((x0, targets))
    }
}

/// Handles of the loss components on a tape.
#[derive(Debug, Clone, Copy)]
pub struct LossTerms {
    pub total: Var,
    pub mse: Var,
    /// `||A||_1` of the adjacency in use, before scaling by `alpha`.
    pub l1: Var,
}

/// `MSE / (B * N_f * N * d) + alpha * ||A||_1` over the selected windows.
pub fn loss_on_tape(
    tape: &mut Tape,
    model: &BoundModel,
    data: &WindowedDataset,
    indices: &[usize],
    alpha: f64,
) -> Result<LossTerms> {
    if indices.is_empty() {
        return invalid("loss needs a non-empty batch");
    }
    if data.node_dim != 2 || data.n_nodes != model.n {
        return invalid(format!(
            "dataset of {} nodes x {} does not match a model of {} nodes x 2",
            data.n_nodes, data.node_dim, model.n
        ));
    }
    let (x0, targets) = data.batch_tensors(indices)?;
    let mut state = tape.constant(x0)?;
    let mut step_errors = Vec::with_capacity(data.n_f);
    for target in targets {
        state = rk4_step_tape(tape, model, state, data.dt)?;
        let value = tape.value(state);
        if !value.is_finite() {
            let bad_row = value
                .data()
                .iter()
                .position(|v| !v.is_finite())
                .unwrap_or(0)
                / data.node_dim;
            let window = indices[bad_row / data.n_nodes];
            return Err(Error::WindowDiverged {
                start: data.windows[window].start,
            });
        }
        let target = tape.constant(target)?;
        step_errors.push(tape.mean_sq_err(state, target)?);
    }
    let mut sum = step_errors[0];
    for &e in &step_errors[1..] {
        sum = tape.add(sum, e)?;
    }
    let mse = tape.scale(sum, 1.0 / data.n_f as f64);
    let l1 = tape.l1_sum(model.adjacency);
    let penalty = tape.scale(l1, alpha);
    let total = tape.add(mse, penalty)?;
    Ok(LossTerms { total, mse, l1 })
}

/// Loss over a batch together with its gradient.
#[derive(Debug, Clone)]
pub struct LossGradient {
    pub loss: f64,
    /// `alpha * ||A||_1`, already included in `loss`.
    pub penalty: f64,
    /// One tensor per entry of [`UdeModel::parameters`], in the same order.
    pub gradient: Vec<Tensor>,
}

pub fn loss_and_gradient(
    model: &UdeModel,
    data: &WindowedDataset,
    indices: &[usize],
    alpha: f64,
) -> Result<LossGradient> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, true, None)?;
    let terms = loss_on_tape(&mut tape, &bound, data, indices, alpha)?;
    let loss = tape.value(terms.total).data()[0];
    let penalty = alpha * tape.value(terms.l1).data()[0];
    let mut grads = tape.backward(terms.total)?;
    let gradient = bound
        .parameter_vars()
        .into_iter()
        .map(|v| grads.take(v).expect("every parameter is a trainable leaf"))
        .collect();
    Ok(LossGradient {
        loss,
        penalty,
        gradient,
    })
}

/// Loss value over every window of `data`.
pub fn loss(model: &UdeModel, data: &WindowedDataset, alpha: f64) -> Result<f64> {
    let mut tape = Tape::new();
    let bound = model.bind(&mut tape, false, None)?;
    let all: Vec<usize> = (0..data.len()).collect();
    let terms = loss_on_tape(&mut tape, &bound, data, &all, alpha)?;
    Ok(tape.value(terms.total).data()[0])
}

/// N_f-step forecast MSE over every window (no penalty).
pub fn forecast_mse(model: &UdeModel, data: &WindowedDataset) -> Result<f64> {
    loss(model, data, 0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments for a list of parameter arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(config: AdamConfig, sizes: impl IntoIterator<Item = usize>) -> Self {
        let sizes: Vec<usize> = sizes.into_iter().collect();
        Self {
            config,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    /// One bias-corrected Adam update.
    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[&[f64]], lr: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return invalid(format!(
                "adam holds {} parameter groups, got {} parameters and {} gradients",
                self.m.len(),
                params.len(),
                grads.len()
            ));
        }
        for (k, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[k].len() || g.len() != self.m[k].len() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: vec![p.len()],
                    right: vec![g.len()],
                });
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for i in 0..p.len() {
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub n_f: usize,
    pub lr: f64,
    pub epochs_phase1: usize,
    pub epochs_phase2: usize,
    pub alpha: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    /// Windows per optimizer step; 0 means the full training split.
    pub batch_size: usize,
    pub stride: usize,
    pub epsilon: f64,
    pub nodal: MlpSpec,
    pub coupling: MlpSpec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_f: 5,
            lr: 0.02,
            epochs_phase1: 1000,
            epochs_phase2: 1000,
            alpha: 1e-5,
            seed: 0,
            adam: AdamConfig::default(),
            batch_size: 0,
            stride: 1,
            epsilon: DEFAULT_EPSILON,
            nodal: MlpSpec::nodal_default(),
            coupling: MlpSpec::coupling_default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_f < 1 {
            return invalid("train.n_f must be at least 1");
        }
        if !(self.lr > 0.0) {
            return invalid(format!("train.lr must be positive, got {}", self.lr));
        }
        if !(self.alpha >= 0.0) || !self.alpha.is_finite() {
            return invalid(format!(
                "train.alpha must be non-negative, got {}",
                self.alpha
            ));
        }
        if self.stride < 1 {
            return invalid("train.stride must be at least 1");
        }
        if !(self.epsilon > 0.0) {
            return invalid(format!(
                "train.epsilon must be positive, got {}",
                self.epsilon
            ));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || !(a.eps > 0.0) {
            return invalid("train.adam needs beta1, beta2 in [0, 1) and eps > 0");
        }
        Ok(())
    }

    pub fn provenance(&self) -> Provenance {
        Provenance {
            alpha: self.alpha,
            epochs_phase1: self.epochs_phase1,
            epochs_phase2: self.epochs_phase2,
            lr: self.lr,
            n_f: self.n_f,
            adam_beta1: self.adam.beta1,
            adam_beta2: self.adam.beta2,
            adam_eps: self.adam.eps,
            batch_size: self.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: u8,
    pub loss: f64,
    /// `alpha * ||A||_1` at this epoch.
    pub penalty: f64,
}

/// Model-selection metrics for one trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub alpha: f64,
    pub a_l1: f64,
    pub mse_train: f64,
    pub mse_dev: f64,
    pub mse_test: f64,
    pub adj_l2_err: Option<f64>,
    pub adj_exact_match: Option<bool>,
    /// Entries where the thresholded matrix differs from the truth.
    pub adj_hamming: Option<usize>,
}

/// Frobenius norm of `soft - truth`.
pub fn adjacency_l2_error(soft: &[f64], truth: &AdjacencyMatrix) -> Result<f64> {
    let n = truth.n();
    if soft.len() != n * n {
        return invalid(format!(
            "learned matrix has {} entries, ground truth is {n}x{n}",
            soft.len()
        ));
    }
    Ok(soft
        .iter()
        .zip(truth.entries())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt())
}

/// Windowed train/dev/test data ready for training.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub train: WindowedDataset,
    pub dev: WindowedDataset,
    pub test: WindowedDataset,
}

impl Datasets {
    pub fn new(splits: &Splits, n_f: usize, stride: usize) -> Result<Self> {
        Ok(Self {
            train: make_windows_strided(&splits.train, n_f, stride, Split::Train)?,
            dev: make_windows_strided(&splits.dev, n_f, stride, Split::Dev)?,
            test: make_windows_strided(&splits.test, n_f, stride, Split::Test)?,
        })
    }
}

pub fn evaluate_metrics(
    model: &UdeModel,
    data: &Datasets,
    alpha: f64,
    truth: Option<&AdjacencyMatrix>,
) -> Result<RunMetrics> {
    let soft = model.soft_adjacency();
    let (adj_l2_err, adj_exact_match, adj_hamming) = match truth {
        Some(t) => {
            let hard = threshold_adjacency(model.n, &soft)?;
            let ham = hard.hamming(t)?;
            (
                Some(adjacency_l2_error(&soft, t)?),
                Some(ham == 0),
                Some(ham),
            )
        }
        None => (None, None, None),
    };
    Ok(RunMetrics {
        alpha,
        a_l1: soft.iter().map(|v| v.abs()).sum(),
        mse_train: forecast_mse(model, &data.train)?,
        mse_dev: forecast_mse(model, &data.dev)?,
        mse_test: forecast_mse(model, &data.test)?,
        adj_l2_err,
        adj_exact_match,
        adj_hamming,
    })
}

/// Optimizer loop state. Cloning a trainer forks an identical run.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub model: UdeModel,
    pub adam: AdamState,
    pub history: Vec<EpochRecord>,
    config: TrainConfig,
    shuffle: ChaCha8Rng,
    epoch: usize,
}

impl Trainer {
    pub fn new(data: &Datasets, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        if data.train.is_empty() {
            return invalid("training split has no windows");
        }
        if data.train.node_dim != 2 {
            return invalid(format!(
                "training data has node dimension {}, the model expects (x, v) pairs",
                data.train.node_dim
            ));
        }
        let model = UdeModel::init(
            data.train.n_nodes,
            config.nodal.clone(),
            config.coupling.clone(),
            config.epsilon,
            config.seed,
        )?;
        let adam = AdamState::new(config.adam, model.parameters().iter().map(|p| p.len()));
        let mut shuffle = ChaCha8Rng::seed_from_u64(config.seed);
        shuffle.set_stream(1);
        Ok(Self {
            model,
            adam,
            history: Vec::new(),
            config: config.clone(),
            shuffle,
            epoch: 0,
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// Runs `epochs` passes over the training windows at a fixed `alpha`.
    pub fn run_phase(
        &mut self,
        data: &WindowedDataset,
        phase: u8,
        epochs: usize,
        alpha: f64,
    ) -> Result<()> {
        let total = data.len();
        let batch = match self.config.batch_size {
            0 => total,
            b => b.min(total),
        };
        let mut order: Vec<usize> = (0..total).collect();
        for _ in 0..epochs {
            if batch < total {
                order.shuffle(&mut self.shuffle);
            }
            let (mut loss_sum, mut pen_sum, mut steps) = (0.0, 0.0, 0usize);
            for chunk in order.chunks(batch) {
                let (loss, penalty) = self.step(data, chunk, alpha).map_err(|e| match e {
                    Error::WindowDiverged { .. } | Error::NonFinite(_) => Error::TrainingDiverged {
                        phase,
                        epoch: self.epoch,
                        loss: f64::NAN,
                    },
                    other => other,
                })?;
                if !loss.is_finite() {
                    return Err(Error::TrainingDiverged {
                        phase,
                        epoch: self.epoch,
                        loss,
                    });
                }
                loss_sum += loss;
                pen_sum += penalty;
                steps += 1;
            }
            self.history.push(EpochRecord {
                epoch: self.epoch,
                phase,
                loss: loss_sum / steps as f64,
                penalty: pen_sum / steps as f64,
            });
            self.epoch += 1;
        }
        Ok(())
    }

    fn step(&mut self, data: &WindowedDataset, batch: &[usize], alpha: f64) -> Result<(f64, f64)> {
        let eval = loss_and_gradient(&self.model, data, batch, alpha)?;
        let grad_slices: Vec<&[f64]> = eval.gradient.iter().map(Tensor::data).collect();
        let lr = self.config.lr;
        self.adam
            .step(&mut self.model.parameters_mut(), &grad_slices, lr)?;
        Ok((eval.loss, eval.penalty))
    }

    pub fn checkpoint(&self, alpha: f64) -> Checkpoint {
        let mut provenance = self.config.provenance();
        provenance.alpha = alpha;
        Checkpoint {
            model: self.model.clone(),
            seed: self.config.seed,
            provenance,
            config_hash: None,
        }
    }
}

/// Everything a finished two-phase run produces.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: UdeModel,
    pub history: Vec<EpochRecord>,
    pub metrics: RunMetrics,
    pub checkpoint: Checkpoint,
}

fn finish(
    trainer: Trainer,
    data: &Datasets,
    alpha: f64,
    truth: Option<&AdjacencyMatrix>,
) -> Result<TrainOutcome> {
    let metrics = evaluate_metrics(&trainer.model, data, alpha, truth)?;
    let checkpoint = trainer.checkpoint(alpha);
    Ok(TrainOutcome {
        model: trainer.model,
        history: trainer.history,
        metrics,
        checkpoint,
    })
}

/// Phase 1 at `alpha = 0`, then phase 2 at `config.alpha`.
pub fn train_two_phase(
    splits: &Splits,
    config: &TrainConfig,
    truth: Option<&AdjacencyMatrix>,
) -> Result<TrainOutcome> {
    let data = Datasets::new(splits, config.n_f, config.stride)?;
    let mut trainer = Trainer::new(&data, config)?;
    trainer.run_phase(&data.train, 1, config.epochs_phase1, 0.0)?;
    trainer.run_phase(&data.train, 2, config.epochs_phase2, config.alpha)?;
    finish(trainer, &data, config.alpha, truth)
}

#[derive(Debug)]
pub struct SweepRun {
    pub alpha: f64,
    pub outcome: std::result::Result<TrainOutcome, String>,
}

/// One two-phase run per `alpha`.
///
/// Phase 1 does not depend on `alpha`, so it is run once and every phase 2
/// continues from a clone of that state; each run is bit-identical to a
/// stand-alone [`train_two_phase`]. With `workers > 1` the phase-2 runs are
/// spread over that many threads.
pub fn alpha_sweep(
    splits: &Splits,
    base: &TrainConfig,
    alphas: &[f64],
    truth: Option<&AdjacencyMatrix>,
    workers: usize,
) -> Result<Vec<SweepRun>> {
    if alphas.is_empty() {
        return invalid("alpha sweep needs at least one alpha");
    }
    if let Some(a) = alphas.iter().find(|a| !(**a >= 0.0) || !a.is_finite()) {
        return invalid(format!("sweep alphas must be non-negative, got {a}"));
    }
    let data = Datasets::new(splits, base.n_f, base.stride)?;
    let mut phase1 = Trainer::new(&data, base)?;
    phase1.run_phase(&data.train, 1, base.epochs_phase1, 0.0)?;

    let run = |alpha: f64| -> SweepRun {
        let mut trainer = phase1.clone();
        trainer.config.alpha = alpha;
        let outcome = trainer
            .run_phase(&data.train, 2, base.epochs_phase2, alpha)
            .and_then(|_| finish(trainer, &data, alpha, truth))
            .map_err(|e| e.to_string());
        SweepRun { alpha, outcome }
    };

    if workers <= 1 {
        return Ok(alphas.iter().map(|&a| run(a)).collect());
    }
    let mut results: Vec<Option<SweepRun>> = (0..alphas.len()).map(|_| None).collect();
    let chunk = alphas.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let run = &run;
        let handles: Vec<_> = alphas
            .chunks(chunk)
            .map(|group| scope.spawn(move || group.iter().map(|&a| run(a)).collect::<Vec<_>>()))
            .collect();
        let mut k = 0;
        for h in handles {
            for r in h.join().expect("sweep worker panicked") {
                results[k] = Some(r);
                k += 1;
            }
        }
    });
    Ok(results
        .into_iter()
        .map(|r| r.expect("all slots filled"))
        .collect())
}

/// Index of the lowest dev MSE; ties go to the smaller `alpha`, then the earlier row.
/// Non-finite dev MSEs never win over finite ones.
pub fn select_model(metrics: &[RunMetrics]) -> Option<usize> {
    let key = |m: &RunMetrics| {
        if m.mse_dev.is_finite() {
            m.mse_dev
        } else {
            f64::INFINITY
        }
    };
    (0..metrics.len()).min_by(|&a, &b| {
        key(&metrics[a])
            .total_cmp(&key(&metrics[b]))
            .then(metrics[a].alpha.total_cmp(&metrics[b].alpha))
            .then(a.cmp(&b))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(len: usize, n: usize) -> Trajectory {
        let states = (0..len * n * 2).map(|k| k as f64 * 0.01).collect();
        Trajectory::new(0.1, n, 2, states).unwrap()
    }

    #[test]
    fn thirds_of_501() {
        let traj = ramp(501, 2);
        let s = split_thirds(&traj, 5).unwrap();
        assert_eq!((s.train.len(), s.dev.len(), s.test.len()), (167, 167, 167));
        let joined = s.train.concat(&s.dev).unwrap().concat(&s.test).unwrap();
        assert_eq!(joined, traj);
        assert_eq!(s.dev.state(0), traj.state(167));
        assert!(split_thirds(&ramp(17, 2), 5).is_err());
        assert!(split_thirds(&ramp(18, 2), 5).is_ok());
    }

    #[test]
    fn window_counts() {
        let seg = ramp(167, 2);
        assert_eq!(make_windows(&seg, 5, Split::Train).unwrap().len(), 162);
        let seg = ramp(6, 2);
        assert_eq!(make_windows(&seg, 5, Split::Train).unwrap().len(), 1);
        assert!(make_windows(&ramp(5, 2), 5, Split::Train).is_err());
        assert_eq!(
            make_windows_strided(&ramp(20, 2), 5, 4, Split::Dev)
                .unwrap()
                .len(),
            4
        );
    }

    #[test]
    fn windows_slice_source() {
        let seg = ramp(30, 3);
        let ds = make_windows(&seg, 4, Split::Test).unwrap();
        for w in &ds.windows {
            for k in 0..5 {
                assert_eq!(&w.samples[k * 6..(k + 1) * 6], seg.state(w.start + k));
            }
        }
    }

    #[test]
    fn adam_zero_gradient_is_fixed_point() {
        let mut p = vec![1.0, -2.0];
        let mut adam = AdamState::new(AdamConfig::default(), [2]);
        adam.step(&mut [&mut p], &[&[0.0, 0.0]], 0.02).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, 1.0, 1.0];
        let mut adam = AdamState::new(AdamConfig::default(), [3]);
        adam.step(&mut [&mut p], &[&[0.5, -3.0, 1e-3]], 0.02)
            .unwrap();
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        for (x, g) in p.iter().zip([0.5_f64, -3.0, 1e-3]) {
            let expect = 1.0 - 0.02 * g / (g.abs() + 1e-8);
            assert!((x - expect).abs() < 1e-15);
            assert!(((1.0 - x).abs() - 0.02).abs() < 1e-6);
        }
    }

    #[test]
    fn adam_shape_mismatch() {
        let mut p = vec![1.0, 1.0];
        let mut adam = AdamState::new(AdamConfig::default(), [2]);
        assert!(adam.step(&mut [&mut p], &[&[1.0]], 0.1).is_err());
    }

    #[test]
    fn l2_error_examples() {
        let mut soft = vec![0.5; 9];
        for i in 0..3 {
            soft[i * 3 + i] = 0.0;
        }
        let e = adjacency_l2_error(&soft, &AdjacencyMatrix::zeros(3)).unwrap();
        assert!((e - 1.5f64.sqrt()).abs() < 1e-15);
        let c = AdjacencyMatrix::cycle3();
        assert_eq!(adjacency_l2_error(c.entries(), &c).unwrap(), 0.0);
        assert!(adjacency_l2_error(&soft, &AdjacencyMatrix::zeros(2)).is_err());
    }

    fn row(alpha: f64, dev: f64) -> RunMetrics {
        RunMetrics {
            alpha,
            a_l1: 0.0,
            mse_train: 0.0,
            mse_dev: dev,
            mse_test: 0.0,
            adj_l2_err: None,
            adj_exact_match: None,
            adj_hamming: None,
        }
    }

    #[test]
    fn select_model_rules() {
        assert_eq!(select_model(&[]), None);
        assert_eq!(select_model(&[row(0.0, 1.0)]), Some(0));
        assert_eq!(
            select_model(&[row(1e-3, 0.5), row(1e-5, 0.5), row(0.0, 0.7)]),
            Some(1)
        );
        assert_eq!(select_model(&[row(0.0, f64::NAN), row(1.0, 3.0)]), Some(1));
    }
}
