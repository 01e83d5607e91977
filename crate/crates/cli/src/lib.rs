//! Pipeline commands behind the `netude` binary.
//!
//! Every command is a pure function of the resolved [`RunConfig`], the
//! artifacts already on disk and the configured seeds. Artifacts go to fixed
//! paths under the output directory (see [`ArtifactLayout`]) and each carries
//! the config hash, either as a JSON field or as a leading
//! `# config_hash: <hex>` comment line in CSV files.

pub mod config;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::{Deserialize, Serialize};

use netude::dynamics::{
    kuramoto_rhs, oscillator_rhs, random_initial_condition, simulate, AdjacencyMatrix, Trajectory,
};
use netude::evaluation::{
    self, open_loop_rollout, simulate_physics, transfer_eval, EvalReport, TransferSpec,
};
use netude::io::{
    loss_log_csv, metrics_csv, phase_portrait_csv, read_trajectory, read_trajectory_meta,
    with_comments, write_trajectory, SystemSpec, TrajectoryMeta,
};
use netude::model::{threshold_adjacency, Checkpoint};
use netude::training::{
    alpha_sweep, select_model, split_thirds, train_two_phase, Datasets, RunMetrics, Splits,
};

pub use config::{config_err, ConfigError, RunConfig, TransferConfig};

/// Fixed file names under the output directory.
#[derive(Debug, Clone)]
pub struct ArtifactLayout {
    pub root: PathBuf,
}

impl ArtifactLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }
    pub fn checkpoints_dir(&self) -> PathBuf {
        self.root.join("checkpoints")
    }
    pub fn metrics_dir(&self) -> PathBuf {
        self.root.join("metrics")
    }
    pub fn reports_dir(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn trajectory_csv(&self) -> PathBuf {
        self.data_dir().join("trajectory.csv")
    }
    pub fn trajectory_meta(&self) -> PathBuf {
        self.data_dir().join("trajectory.json")
    }
    pub fn adjacency(&self) -> PathBuf {
        self.data_dir().join("adjacency.json")
    }

    pub fn model_checkpoint(&self) -> PathBuf {
        self.checkpoints_dir().join("model.json")
    }
    pub fn sweep_checkpoint(&self, k: usize) -> PathBuf {
        self.checkpoints_dir().join(format!("sweep_{k}.json"))
    }

    pub fn loss_log(&self) -> PathBuf {
        self.metrics_dir().join("loss_log.csv")
    }
    pub fn train_metrics(&self) -> PathBuf {
        self.metrics_dir().join("train_metrics.csv")
    }
    pub fn sweep_loss_log(&self, k: usize) -> PathBuf {
        self.metrics_dir().join(format!("sweep_{k}_loss_log.csv"))
    }
    pub fn sweep_metrics(&self) -> PathBuf {
        self.metrics_dir().join("sweep_metrics.csv")
    }
    pub fn sweep_runs(&self) -> PathBuf {
        self.metrics_dir().join("sweep_runs.json")
    }
    pub fn selected(&self) -> PathBuf {
        self.metrics_dir().join("selected.json")
    }

    pub fn evaluation_report(&self) -> PathBuf {
        self.reports_dir().join("evaluation.json")
    }
    pub fn evaluation_rollout(&self) -> PathBuf {
        self.reports_dir().join("evaluation_rollout.csv")
    }
    pub fn transfer_report(&self) -> PathBuf {
        self.reports_dir().join("transfer.json")
    }
    pub fn transfer_learned(&self) -> PathBuf {
        self.reports_dir().join("transfer_learned.csv")
    }
    pub fn transfer_true(&self) -> PathBuf {
        self.reports_dir().join("transfer_true.csv")
    }

    /// Path relative to the output root when it lies inside it.
    fn display_rel(&self, path: &Path) -> String {
        path.strip_prefix(&self.root)
            .unwrap_or(path)
            .display()
            .to_string()
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CommandKind {
    Simulate,
    Train,
    Sweep,
    Evaluate,
    Transfer,
    Config,
}

/// `--seed` feeds the initial condition for `simulate` and the model
/// initialization for every other command. `--alpha` replaces `train.alpha`
/// and collapses the sweep grid to that single value.
pub fn apply_overrides(cfg: &mut RunConfig, ov: &Overrides, cmd: CommandKind) {
    if let Some(out) = &ov.out {
        cfg.output = out.clone();
    }
    if let Some(seed) = ov.seed {
        match cmd {
            CommandKind::Simulate => cfg.trajectory.ic_seed = seed,
            _ => cfg.train.seed = seed,
        }
    }
    if let Some(alpha) = ov.alpha {
        cfg.train.alpha = alpha;
        cfg.sweep.alphas = vec![alpha];
    }
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    std::fs::write(path, contents).with_context(|| format!("cannot write {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn hash_comment(csv: String, hash: &str) -> String {
    with_comments(csv, &[("config_hash", hash)])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdjacencyFile {
    pub config_hash: String,
    #[serde(flatten)]
    pub adjacency: AdjacencyMatrix,
}

/// Simulates the ground-truth system and writes `data/`.
pub fn cmd_simulate(cfg: &RunConfig) -> anyhow::Result<ArtifactLayout> {
    cfg.validate()?;
    let layout = ArtifactLayout::new(&cfg.output);
    let a = cfg.ground_truth()?;
    let hash = cfg.hash();
    let steps = cfg.trajectory.steps;
    let dt = cfg.trajectory.dt;
    let traj = match &cfg.system {
        SystemSpec::Oscillator(p) => {
            let x0 = random_initial_condition(a.n(), 2, cfg.trajectory.ic_seed);
            simulate(|s: &[f64]| oscillator_rhs(s, &a, p), &x0, 2, steps, dt)
        }
        SystemSpec::Kuramoto(p) => {
            let x0 = random_initial_condition(a.n(), 1, cfg.trajectory.ic_seed);
            simulate(|s: &[f64]| kuramoto_rhs(s, &a, p), &x0, 1, steps, dt)
        }
    }
    .context("ground-truth simulation failed")?;
    let meta = TrajectoryMeta {
        dt,
        n_nodes: a.n(),
        node_dim: traj.node_dim(),
        samples: traj.len(),
        system: cfg.system.clone(),
        adjacency: a.clone(),
        seed: cfg.trajectory.ic_seed,
        config_hash: Some(hash.clone()),
    };
    create_dir(&layout.data_dir())?;
    write_trajectory(
        &layout.trajectory_csv(),
        &layout.trajectory_meta(),
        &traj,
        &meta,
    )?;
    write_json(
        &layout.adjacency(),
        &AdjacencyFile {
            config_hash: hash,
            adjacency: a,
        },
    )?;
    Ok(layout)
}

/// Trajectory written by `simulate`, checked for the two-dimensional node
/// states the model assumes.
pub struct LoadedData {
    pub meta: TrajectoryMeta,
    pub trajectory: Trajectory,
}

pub fn load_data(layout: &ArtifactLayout) -> anyhow::Result<LoadedData> {
    let meta_path = layout.trajectory_meta();
    if !meta_path.exists() {
        return config_err(format!(
            "no trajectory at {}; run `netude simulate` with the same --out first",
            meta_path.display()
        ));
    }
    let meta = read_trajectory_meta(&meta_path)?;
    let trajectory = read_trajectory(&layout.trajectory_csv(), &meta)?;
    if meta.node_dim != 2 || !matches!(meta.system, SystemSpec::Oscillator(_)) {
        return config_err(format!(
            "{}: training needs oscillator data with (x, v) node states; found node dimension {}",
            meta_path.display(),
            meta.node_dim
        ));
    }
    Ok(LoadedData { meta, trajectory })
}

fn splits_for(cfg: &RunConfig, data: &LoadedData) -> anyhow::Result<Splits> {
    split_thirds(&data.trajectory, cfg.train.n_f)
        .map_err(|e| ConfigError(format!("train.n_f = {}: {e}", cfg.train.n_f)).into())
}

/// Two-phase training at `train.alpha`; writes the checkpoint, loss log and metrics row.
pub fn cmd_train(cfg: &RunConfig) -> anyhow::Result<RunMetrics> {
    cfg.validate()?;
    let layout = ArtifactLayout::new(&cfg.output);
    let data = load_data(&layout)?;
    let splits = splits_for(cfg, &data)?;
    let hash = cfg.hash();
    let outcome = train_two_phase(&splits, &cfg.train, Some(&data.meta.adjacency))
        .context("training failed")?;
    let mut checkpoint = outcome.checkpoint;
    checkpoint.config_hash = Some(hash.clone());
    create_dir(&layout.checkpoints_dir())?;
    create_dir(&layout.metrics_dir())?;
    checkpoint.save(&layout.model_checkpoint())?;
    write(
        &layout.loss_log(),
        hash_comment(loss_log_csv(&outcome.history), &hash),
    )?;
    write(
        &layout.train_metrics(),
        hash_comment(metrics_csv(std::slice::from_ref(&outcome.metrics)), &hash),
    )?;
    Ok(outcome.metrics)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRunRecord {
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRunsFile {
    pub config_hash: String,
    pub runs: Vec<SweepRunRecord>,
}

/// Pointer to the run chosen by lowest dev MSE.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedModel {
    pub config_hash: String,
    pub index: usize,
    pub alpha: f64,
    pub mse_dev: f64,
    /// Relative to the output directory.
    pub checkpoint: String,
}

pub struct SweepSummary {
    pub metrics: Vec<RunMetrics>,
    pub selected: Option<SelectedModel>,
    pub failures: usize,
}

fn failed_row(alpha: f64) -> RunMetrics {
    RunMetrics {
        alpha,
        a_l1: f64::NAN,
        mse_train: f64::NAN,
        mse_dev: f64::NAN,
        mse_test: f64::NAN,
        adj_l2_err: None,
        adj_exact_match: None,
        adj_hamming: None,
    }
}

/// One run per `sweep.alphas` entry. Failed runs keep their row (as NaN) so
/// the table always has one row per alpha; the summary counts them.
pub fn cmd_sweep(cfg: &RunConfig, workers: usize) -> anyhow::Result<SweepSummary> {
    cfg.validate()?;
    if workers == 0 {
        return config_err("--parallel must be at least 1");
    }
    let layout = ArtifactLayout::new(&cfg.output);
    let data = load_data(&layout)?;
    let splits = splits_for(cfg, &data)?;
    let hash = cfg.hash();
    let runs = alpha_sweep(
        &splits,
        &cfg.train,
        &cfg.sweep.alphas,
        Some(&data.meta.adjacency),
        workers,
    )
    .context("sweep failed before phase 2")?;
    create_dir(&layout.checkpoints_dir())?;
    create_dir(&layout.metrics_dir())?;

    let mut metrics = Vec::with_capacity(runs.len());
    let mut records = Vec::with_capacity(runs.len());
    let mut failures = 0;
    for (k, run) in runs.into_iter().enumerate() {
        match run.outcome {
            Ok(outcome) => {
                let mut checkpoint = outcome.checkpoint;
                checkpoint.config_hash = Some(hash.clone());
                let path = layout.sweep_checkpoint(k);
                checkpoint.save(&path)?;
                write(
                    &layout.sweep_loss_log(k),
                    hash_comment(loss_log_csv(&outcome.history), &hash),
                )?;
                metrics.push(outcome.metrics);
                records.push(SweepRunRecord {
                    alpha: run.alpha,
                    checkpoint: Some(layout.display_rel(&path)),
                    error: None,
                });
            }
            Err(e) => {
                failures += 1;
                metrics.push(failed_row(run.alpha));
                records.push(SweepRunRecord {
                    alpha: run.alpha,
                    checkpoint: None,
                    error: Some(e),
                });
            }
        }
    }
    write(
        &layout.sweep_metrics(),
        hash_comment(metrics_csv(&metrics), &hash),
    )?;
    write_json(
        &layout.sweep_runs(),
        &SweepRunsFile {
            config_hash: hash.clone(),
            runs: records.clone(),
        },
    )?;
    let selected = select_model(&metrics)
        .filter(|&k| records[k].checkpoint.is_some())
        .map(|k| SelectedModel {
            config_hash: hash.clone(),
            index: k,
            alpha: metrics[k].alpha,
            mse_dev: metrics[k].mse_dev,
            checkpoint: records[k].checkpoint.clone().expect("filtered"),
        });
    match &selected {
        Some(s) => write_json(&layout.selected(), s)?,
        None => {
            let _ = std::fs::remove_file(layout.selected());
        }
    }
    Ok(SweepSummary {
        metrics,
        selected,
        failures,
    })
}

/// `explicit`, else the sweep's selected model, else the `train` checkpoint.
pub fn resolve_checkpoint(
    layout: &ArtifactLayout,
    explicit: Option<&Path>,
) -> anyhow::Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.to_path_buf());
    }
    let pointer = layout.selected();
    if pointer.exists() {
        let text = std::fs::read_to_string(&pointer)?;
        let sel: SelectedModel = serde_json::from_str(&text)
            .with_context(|| format!("malformed {}", pointer.display()))?;
        return Ok(layout.root.join(sel.checkpoint));
    }
    Ok(layout.model_checkpoint())
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    if !path.exists() {
        return config_err(format!(
            "no checkpoint at {}; run `netude train` or `netude sweep` first, or pass --checkpoint",
            path.display()
        ));
    }
    Checkpoint::load(path)
        .map_err(|e| ConfigError(format!("invalid checkpoint {}: {e}", path.display())).into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub config_hash: String,
    pub checkpoint: String,
    pub report: EvalReport,
}

/// Split MSEs and an open-loop rollout of the thresholded model over the whole trajectory.
pub fn cmd_evaluate(cfg: &RunConfig, checkpoint: Option<&Path>) -> anyhow::Result<EvalReport> {
    cfg.validate()?;
    let layout = ArtifactLayout::new(&cfg.output);
    let data = load_data(&layout)?;
    let ckpt_path = resolve_checkpoint(&layout, checkpoint)?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    if ckpt.model.n != data.meta.n_nodes {
        return config_err(format!(
            "checkpoint {} has {} nodes but the data has {}",
            ckpt_path.display(),
            ckpt.model.n,
            data.meta.n_nodes
        ));
    }
    let splits = splits_for(cfg, &data)?;
    let datasets = Datasets::new(&splits, cfg.train.n_f, cfg.train.stride)?;
    let report = evaluation::evaluate(&ckpt.model, &datasets, &data.trajectory)
        .context("evaluation failed")?;
    let hard = threshold_adjacency(ckpt.model.n, &ckpt.model.soft_adjacency())?;
    let traj = &data.trajectory;
    let rollout = open_loop_rollout(
        &ckpt.model,
        Some(&hard),
        traj.state(0),
        traj.len() - 1,
        traj.dt(),
    )?;
    let hash = cfg.hash();
    create_dir(&layout.reports_dir())?;
    write_json(
        &layout.evaluation_report(),
        &ReportFile {
            config_hash: hash.clone(),
            checkpoint: layout.display_rel(&ckpt_path),
            report: report.clone(),
        },
    )?;
    write(
        &layout.evaluation_rollout(),
        hash_comment(phase_portrait_csv(&rollout)?, &hash),
    )?;
    Ok(report)
}

/// Deploys the checkpoint's learned physics on the transfer network and
/// compares against the ground-truth system on the same network.
pub fn cmd_transfer(
    cfg: &RunConfig,
    checkpoint: Option<&Path>,
    spec: Option<&TransferConfig>,
) -> anyhow::Result<EvalReport> {
    cfg.validate()?;
    let spec = spec.unwrap_or(&cfg.transfer);
    spec.validate("transfer")?;
    let SystemSpec::Oscillator(truth) = &cfg.system else {
        return config_err(
            "system.kind must be oscillator for transfer; the learned model has (x, v) nodes",
        );
    };
    let layout = ArtifactLayout::new(&cfg.output);
    let ckpt_path = resolve_checkpoint(&layout, checkpoint)?;
    let ckpt = load_checkpoint(&ckpt_path)?;
    if ckpt.model.node_dim != 2 {
        bail!(ConfigError(format!(
            "checkpoint {} has node dimension {}, transfer needs 2",
            ckpt_path.display(),
            ckpt.model.node_dim
        )));
    }
    let adjacency = spec.adjacency.load("transfer.adjacency")?;
    let x0 = spec.initial_state(adjacency.n());
    if x0.len() != 2 * adjacency.n() {
        return config_err(format!(
            "transfer.x0 has {} values but the transfer adjacency has {} nodes of dimension 2",
            x0.len(),
            adjacency.n()
        ));
    }
    let tspec = TransferSpec {
        adjacency,
        x0,
        n_steps: spec.steps,
        dt: spec.dt,
    };
    let report = transfer_eval(&ckpt.model, &tspec, truth).context("transfer rollout failed")?;
    let learned = simulate_physics(
        &ckpt.model,
        &tspec.adjacency,
        &tspec.x0,
        tspec.n_steps,
        tspec.dt,
    )?;
    let true_traj = simulate_physics(truth, &tspec.adjacency, &tspec.x0, tspec.n_steps, tspec.dt)?;
    let hash = cfg.hash();
    create_dir(&layout.reports_dir())?;
    write_json(
        &layout.transfer_report(),
        &ReportFile {
            config_hash: hash.clone(),
            checkpoint: layout.display_rel(&ckpt_path),
            report: report.clone(),
        },
    )?;
    write(
        &layout.transfer_learned(),
        hash_comment(phase_portrait_csv(&learned)?, &hash),
    )?;
    write(
        &layout.transfer_true(),
        hash_comment(phase_portrait_csv(&true_traj)?, &hash),
    )?;
    Ok(report)
}
