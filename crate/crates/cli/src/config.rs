//! Declarative run configuration. Every field has a default, so an empty file
//! describes the reference experiment: the 11-node oscillator network, 500
//! steps at `dt = 0.1`, two-phase training and the seven-value alpha grid.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use netude::dynamics::{
    random_adjacency, random_initial_condition, AdjacencyMatrix, KuramotoParams, OscillatorParams,
};
use netude::io::SystemSpec;
use netude::training::{TrainConfig, DEFAULT_ALPHAS};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

/// Marks errors caused by the user's input rather than by a run.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

pub fn config_err<T>(msg: impl Into<String>) -> anyhow::Result<T> {
    Err(ConfigError(msg.into()).into())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "lowercase", deny_unknown_fields)]
pub enum AdjacencySource {
    /// `sparse11` or `cycle3`.
    Fixture {
        name: String,
    },
    /// JSON file holding `{"n": .., "entries": [..]}`, as written to `data/adjacency.json`.
    File {
        path: PathBuf,
    },
    Random {
        n: usize,
        density: f64,
        seed: u64,
    },
}

impl AdjacencySource {
    fn validate(&self, field: &str) -> anyhow::Result<()> {
        match self {
            Self::Fixture { name } => {
                if AdjacencyMatrix::fixture(name).is_err() {
                    return config_err(format!(
                        "{field}.name: unknown fixture `{name}` (expected sparse11 or cycle3)"
                    ));
                }
            }
            Self::File { path } => {
                if path.as_os_str().is_empty() {
                    return config_err(format!("{field}.path must not be empty"));
                }
            }
            Self::Random { n, density, .. } => {
                if *n == 0 {
                    return config_err(format!("{field}.n must be at least 1"));
                }
                if !(0.0..=1.0).contains(density) {
                    return config_err(format!(
                        "{field}.density must lie in [0, 1], got {density}"
                    ));
                }
            }
        }
        Ok(())
    }

    /// Resolves relative file paths against `base`.
    fn rebase(&mut self, base: &Path) {
        if let Self::File { path } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }

    pub fn load(&self, field: &str) -> anyhow::Result<AdjacencyMatrix> {
        let a = match self {
            Self::Fixture { name } => AdjacencyMatrix::fixture(name)?,
            Self::File { path } => {
                let text = std::fs::read_to_string(path)
                    .with_context(|| format!("{field}.path: cannot read {}", path.display()))?;
                let a: AdjacencyMatrix = serde_json::from_str(&text)
                    .map_err(|e| ConfigError(format!("{field}.path: {}: {e}", path.display())))?;
                AdjacencyMatrix::new(a.n(), a.entries().to_vec())
                    .map_err(|e| ConfigError(format!("{field}.path: {}: {e}", path.display())))?
            }
            Self::Random { n, density, seed } => random_adjacency(*n, *density, *seed)?,
        };
        if !a.is_binary() || !a.has_zero_diagonal() {
            return config_err(format!(
                "{field}: adjacency must be binary with a zero diagonal"
            ));
        }
        Ok(a)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub steps: usize,
    pub dt: f64,
    /// Seed of the uniform `[-1, 1]` initial condition.
    pub ic_seed: u64,
}

impl Default for TrajectoryConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            dt: 0.1,
            ic_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub alphas: Vec<f64>,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            alphas: DEFAULT_ALPHAS.to_vec(),
        }
    }
}

/// Unseen network the trained physics are deployed on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransferConfig {
    pub adjacency: AdjacencySource,
    pub steps: usize,
    pub dt: f64,
    pub ic_seed: u64,
    /// Explicit initial state `[x_0, v_0, x_1, v_1, ..]`; overrides `ic_seed`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<f64>>,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self {
            adjacency: AdjacencySource::Fixture {
                name: "cycle3".into(),
            },
            steps: 500,
            dt: 0.1,
            ic_seed: 1,
            x0: None,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self, field: &str) -> anyhow::Result<()> {
        self.adjacency.validate(&format!("{field}.adjacency"))?;
        if self.steps < 2 {
            return config_err(format!("{field}.steps must be at least 2"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return config_err(format!("{field}.dt must be positive, got {}", self.dt));
        }
        if let Some(x0) = &self.x0 {
            if x0.iter().any(|v| !v.is_finite()) {
                return config_err(format!("{field}.x0 must be finite"));
            }
        }
        Ok(())
    }

    pub fn initial_state(&self, n: usize) -> Vec<f64> {
        self.x0
            .clone()
            .unwrap_or_else(|| random_initial_condition(n, 2, self.ic_seed))
    }

    /// Parses a stand-alone transfer spec file; relative paths resolve against its directory.
    pub fn from_file(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read {}", path.display()))?;
        let mut spec: Self =
            toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        spec.adjacency
            .rebase(path.parent().unwrap_or(Path::new(".")));
        spec.validate("transfer")?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Artifact directory; not part of the config hash.
    pub output: PathBuf,
    pub system: SystemSpec,
    pub adjacency: AdjacencySource,
    pub trajectory: TrajectoryConfig,
    pub train: TrainConfig,
    pub sweep: SweepConfig,
    pub transfer: TransferConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            output: PathBuf::from("runs/default"),
            system: SystemSpec::Oscillator(OscillatorParams::default()),
            adjacency: AdjacencySource::Fixture {
                name: "sparse11".into(),
            },
            trajectory: TrajectoryConfig::default(),
            train: TrainConfig::default(),
            sweep: SweepConfig::default(),
            transfer: TransferConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str, origin: &str) -> anyhow::Result<Self> {
        toml::from_str(text).map_err(|e| ConfigError(format!("{origin}: {e}")).into())
    }

    /// Reads `path`, or returns the defaults when it is `None`. Relative paths
    /// inside the file resolve against the file's directory.
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        if cfg.output.is_relative() {
            cfg.output = base.join(&cfg.output);
        }
        cfg.adjacency.rebase(base);
        cfg.transfer.adjacency.rebase(base);
        Ok(cfg)
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        match &self.system {
            SystemSpec::Oscillator(p) => p
                .validate()
                .map_err(|e| ConfigError(format!("system: {e}")))?,
            SystemSpec::Kuramoto(KuramotoParams { omega, k }) => {
                if !k.is_finite() || omega.iter().any(|w| !w.is_finite()) {
                    return config_err("system: Kuramoto omega and k must be finite");
                }
            }
        }
        self.adjacency.validate("adjacency")?;
        let t = &self.trajectory;
        if t.steps < 1 {
            return config_err("trajectory.steps must be at least 1");
        }
        if !(t.dt > 0.0) || !t.dt.is_finite() {
            return config_err(format!("trajectory.dt must be positive, got {}", t.dt));
        }
        self.train
            .validate()
            .map_err(|e| ConfigError(e.to_string()))?;
        if self.sweep.alphas.is_empty() {
            return config_err("sweep.alphas must not be empty");
        }
        if let Some(a) = self
            .sweep
            .alphas
            .iter()
            .find(|a| !(**a >= 0.0) || !a.is_finite())
        {
            return config_err(format!("sweep.alphas must be non-negative, got {a}"));
        }
        self.transfer.validate("transfer")
    }

    /// Hex SHA-256 of the canonical JSON form, with `output` blanked so the
    /// same experiment hashes identically wherever it is written.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.output = PathBuf::new();
        let json = serde_json::to_string(&canonical).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn to_toml(&self) -> anyhow::Result<String> {
        Ok(toml::to_string_pretty(self)?)
    }

    /// The ground-truth network, with a consistency check on Kuramoto frequencies.
    pub fn ground_truth(&self) -> anyhow::Result<AdjacencyMatrix> {
        let a = self.adjacency.load("adjacency")?;
        if let SystemSpec::Kuramoto(p) = &self.system {
            if p.omega.len() != a.n() {
                bail!(ConfigError(format!(
                    "system.omega has {} entries but the adjacency has {} nodes",
                    p.omega.len(),
                    a.n()
                )));
            }
        }
        Ok(a)
    }
}
