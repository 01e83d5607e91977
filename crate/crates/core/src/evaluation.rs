//! Post-training analysis: open-loop rollouts, forecast error per split, and
//! transfer of learned physics onto networks that were never trained on.

use serde::{Deserialize, Serialize};

use crate::dynamics::{oscillator_rhs, simulate, AdjacencyMatrix, OscillatorParams, Trajectory};
use crate::error::{invalid, Result};
use crate::model::{threshold_adjacency, UdeModel};
use crate::training::{forecast_mse, Datasets};

/// Length of the transient window compared in transfer reports, in time units.
pub const TRANSIENT_HORIZON: f64 = 20.0;

/// Nodal plus coupling physics that can be placed on an arbitrary binary network.
pub trait NetworkPhysics {
    fn derivative(&self, state: &[f64], adjacency: &AdjacencyMatrix) -> Result<Vec<f64>>;
}

impl NetworkPhysics for UdeModel {
    fn derivative(&self, state: &[f64], adjacency: &AdjacencyMatrix) -> Result<Vec<f64>> {
        self.rhs_with(state, adjacency.entries())
    }
}

impl NetworkPhysics for OscillatorParams {
    fn derivative(&self, state: &[f64], adjacency: &AdjacencyMatrix) -> Result<Vec<f64>> {
        oscillator_rhs(state, adjacency, self)
    }
}

/// Rolls a network forward with frozen parameters.
pub fn simulate_physics(
    physics: &dyn NetworkPhysics,
    adjacency: &AdjacencyMatrix,
    x0: &[f64],
    n_steps: usize,
    dt: f64,
) -> Result<Trajectory> {
    if x0.len() != 2 * adjacency.n() {
        return invalid(format!(
            "initial state of length {} does not match {} nodes of dimension 2",
            x0.len(),
            adjacency.n()
        ));
    }
    if n_steps == 0 {
        return Trajectory::new(dt, adjacency.n(), 2, x0.to_vec());
    }
    simulate(
        |s: &[f64]| physics.derivative(s, adjacency),
        x0,
        2,
        n_steps,
        dt,
    )
}

/// Non-differentiable forward simulation of a trained model.
///
/// Without an override the learned soft adjacency is used; with one, the
/// supplied binary matrix replaces it (and may have a different node count).
pub fn open_loop_rollout(
    model: &UdeModel,
    adjacency_override: Option<&AdjacencyMatrix>,
    x0: &[f64],
    n_steps: usize,
    dt: f64,
) -> Result<Trajectory> {
    match adjacency_override {
        Some(a) => {
            a.require_binary()?;
            simulate_physics(model, a, x0, n_steps, dt)
        }
        None => {
            if x0.len() != 2 * model.n {
                return invalid(format!(
                    "initial state of length {} does not match the model's {} nodes",
                    x0.len(),
                    model.n
                ));
            }
            if n_steps == 0 {
                return Trajectory::new(dt, model.n, 2, x0.to_vec());
            }
            simulate(|s: &[f64]| model.rhs(s), x0, 2, n_steps, dt)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferSpec {
    pub adjacency: AdjacencyMatrix,
    pub x0: Vec<f64>,
    pub n_steps: usize,
    pub dt: f64,
}

impl TransferSpec {
    pub fn validate(&self) -> Result<()> {
        self.adjacency.require_binary()?;
        if self.x0.len() != 2 * self.adjacency.n() {
            return invalid(format!(
                "transfer initial state has {} values, expected {} for {} nodes",
                self.x0.len(),
                2 * self.adjacency.n(),
                self.adjacency.n()
            ));
        }
        if self.n_steps < 2 {
            return invalid("transfer rollout needs at least two steps");
        }
        if !(self.dt > 0.0) {
            return invalid(format!("transfer dt must be positive, got {}", self.dt));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMse {
    pub train: f64,
    pub dev: f64,
    pub test: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub split_mse: Option<SplitMse>,
    pub n_steps: usize,
    pub dt: f64,
    /// Mean squared state error over the whole rollout.
    pub rollout_mse: f64,
    /// Mean squared state error over `t < TRANSIENT_HORIZON`.
    pub transient_mse: f64,
    /// Per node, `max |x|` over the final half of the learned rollout.
    pub amplitude_learned: Vec<f64>,
    pub amplitude_true: Vec<f64>,
    pub amplitude_ratio: Vec<f64>,
}

fn mse_over(a: &Trajectory, b: &Trajectory, samples: usize) -> f64 {
    let w = a.state_len();
    let n = samples.min(a.len()).min(b.len()) * w;
    if n == 0 {
        return 0.0;
    }
    a.states()[..n]
        .iter()
        .zip(&b.states()[..n])
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n as f64
}

/// Compares two rollouts of equal layout.
pub fn compare_rollouts(learned: &Trajectory, truth: &Trajectory) -> Result<EvalReport> {
    if learned.len() != truth.len() || learned.state_len() != truth.state_len() {
        return invalid("rollouts to compare must have the same layout and length");
    }
    let dt = truth.dt();
    let transient = ((TRANSIENT_HORIZON / dt).round() as usize).max(1);
    let half = truth.len() / 2;
    let amplitude_learned = learned.max_abs(0, half);
    let amplitude_true = truth.max_abs(0, half);
    let amplitude_ratio = amplitude_learned
        .iter()
        .zip(&amplitude_true)
        .map(|(l, t)| if *t == 0.0 && *l == 0.0 { 1.0 } else { l / t })
        .collect();
    Ok(EvalReport {
        split_mse: None,
        n_steps: truth.len() - 1,
        dt,
        rollout_mse: mse_over(learned, truth, truth.len()),
        transient_mse: mse_over(learned, truth, transient),
        amplitude_learned,
        amplitude_true,
        amplitude_ratio,
    })
}

/// Runs learned and ground-truth physics on `spec.adjacency` from the same
/// initial condition and compares them.
pub fn transfer_eval(
    learned: &dyn NetworkPhysics,
    spec: &TransferSpec,
    truth: &OscillatorParams,
) -> Result<EvalReport> {
    spec.validate()?;
    let true_traj = simulate_physics(truth, &spec.adjacency, &spec.x0, spec.n_steps, spec.dt)
        .map_err(|e| crate::Error::Invalid(format!("ground-truth system: {e}")))?;
    let learned_traj = simulate_physics(learned, &spec.adjacency, &spec.x0, spec.n_steps, spec.dt)
        .map_err(|e| crate::Error::Invalid(format!("learned system: {e}")))?;
    compare_rollouts(&learned_traj, &true_traj)
}

/// Forecast error on every split plus an open-loop rollout of the thresholded
/// model against `data_traj`, started from its first sample.
pub fn evaluate(model: &UdeModel, data: &Datasets, data_traj: &Trajectory) -> Result<EvalReport> {
    let split_mse = SplitMse {
        train: forecast_mse(model, &data.train)?,
        dev: forecast_mse(model, &data.dev)?,
        test: forecast_mse(model, &data.test)?,
    };
    let hard = threshold_adjacency(model.n, &model.soft_adjacency())?;
    let rollout = open_loop_rollout(
        model,
        Some(&hard),
        data_traj.state(0),
        data_traj.len() - 1,
        data_traj.dt(),
    )?;
    let mut report = compare_rollouts(&rollout, data_traj)?;
    report.split_mse = Some(split_mse);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::random_initial_condition;
    use crate::model::MlpSpec;

    #[test]
    fn self_transfer_is_identity() {
        let p = OscillatorParams::default();
        for adjacency in [
            AdjacencyMatrix::cycle3(),
            AdjacencyMatrix::zeros(3),
            AdjacencyMatrix::complete(3),
        ] {
            let spec = TransferSpec {
                x0: random_initial_condition(3, 2, 4),
                adjacency,
                n_steps: 500,
                dt: 0.1,
            };
            let r = transfer_eval(&p, &spec, &p).unwrap();
            assert_eq!(r.rollout_mse, 0.0);
            assert_eq!(r.transient_mse, 0.0);
            assert!(r.amplitude_ratio.iter().all(|&q| q == 1.0));
        }
    }

    #[test]
    fn zero_horizon_returns_initial_state() {
        let m = UdeModel::init(
            3,
            MlpSpec::nodal_default(),
            MlpSpec::coupling_default(),
            0.01,
            0,
        )
        .unwrap();
        let x0 = random_initial_condition(3, 2, 1);
        let t = open_loop_rollout(&m, None, &x0, 0, 0.1).unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.state(0), &x0[..]);
    }

    #[test]
    fn zero_networks_drift_linearly() {
        let mut m = UdeModel::init(
            2,
            MlpSpec::nodal_default(),
            MlpSpec::coupling_default(),
            0.01,
            0,
        )
        .unwrap();
        m.zero_networks();
        let x0 = [0.0, 1.0, 1.0, -0.5];
        let t = open_loop_rollout(&m, Some(&AdjacencyMatrix::complete(2)), &x0, 10, 0.1).unwrap();
        let last = t.state(10);
        assert!((last[0] - 1.0).abs() < 1e-12 && last[1] == 1.0);
        assert!((last[2] - 0.5).abs() < 1e-12 && last[3] == -0.5);
    }

    #[test]
    fn empty_network_decouples_both_systems() {
        let p = OscillatorParams::default();
        let m = UdeModel::init(
            3,
            MlpSpec::nodal_default(),
            MlpSpec::coupling_default(),
            0.01,
            2,
        )
        .unwrap();
        let a = AdjacencyMatrix::zeros(3);
        let x0 = random_initial_condition(3, 2, 9);
        let mut kicked = x0.clone();
        kicked[4] += 0.3;
        for phys in [&p as &dyn NetworkPhysics, &m] {
            let base = simulate_physics(phys, &a, &x0, 50, 0.1).unwrap();
            let pert = simulate_physics(phys, &a, &kicked, 50, 0.1).unwrap();
            for k in 0..base.len() {
                assert_eq!(base.state(k)[..4], pert.state(k)[..4]);
            }
        }
    }

    #[test]
    fn transfer_rejects_bad_spec() {
        let p = OscillatorParams::default();
        let spec = TransferSpec {
            adjacency: AdjacencyMatrix::cycle3(),
            x0: vec![0.1; 4],
            n_steps: 10,
            dt: 0.1,
        };
        assert!(transfer_eval(&p, &spec, &p).is_err());
        let mut soft = AdjacencyMatrix::cycle3().entries().to_vec();
        soft[1] = 0.4;
        let spec = TransferSpec {
            adjacency: AdjacencyMatrix::new(3, soft).unwrap(),
            x0: vec![0.1; 6],
            n_steps: 10,
            dt: 0.1,
        };
        assert!(transfer_eval(&p, &spec, &p).is_err());
    }
}
