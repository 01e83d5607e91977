//! Artifact formats.
//!
//! * trajectory: CSV `t,node,dim,value` (one row per scalar, time-major) plus
//!   a JSON sidecar carrying `dt`, node count, node dimension, system
//!   parameters and seed
//! * phase portrait: CSV `t,node,x,v`
//! * metrics table: CSV `alpha,a_l1,mse_train,mse_dev,mse_test,adj_l2_err,adj_exact_match`
//! * loss log: CSV `epoch,phase,loss,penalty`
//!
//! Reals are written with 17 significant digits so every value round-trips exactly.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{AdjacencyMatrix, KuramotoParams, OscillatorParams, Trajectory};
use crate::error::{Error, Result};
use crate::training::{EpochRecord, RunMetrics};

/// Formats `v` with 17 significant digits.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SystemSpec {
    Oscillator(OscillatorParams),
    Kuramoto(KuramotoParams),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub dt: f64,
    pub n_nodes: usize,
    pub node_dim: usize,
    pub samples: usize,
    pub system: SystemSpec,
    pub adjacency: AdjacencyMatrix,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
}

fn parse_err(path: &Path, line: usize, msg: impl std::fmt::Display) -> Error {
    Error::Parse(format!("{}:{line}: {msg}", path.display()))
}

fn parse_f64(path: &Path, line: usize, field: &str) -> Result<f64> {
    field
        .trim()
        .parse()
        .map_err(|_| parse_err(path, line, format!("`{field}` is not a real number")))
}

fn parse_usize(path: &Path, line: usize, field: &str) -> Result<usize> {
    field.trim().parse().map_err(|_| {
        parse_err(
            path,
            line,
            format!("`{field}` is not a non-negative integer"),
        )
    })
}

/// Reads a CSV with the exact `header`, returning `(line number, fields)` per data row.
fn read_rows(path: &Path, header: &str) -> Result<Vec<(usize, Vec<String>)>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text
        .lines()
        .enumerate()
        .skip_while(|(_, l)| l.starts_with('#'));
    match lines.next() {
        Some((_, h)) if h.trim() == header => {}
        Some((i, h)) => {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected header `{header}`, found `{h}`"),
            ))
        }
        None => return Err(parse_err(path, 1, "empty file")),
    }
    let width = header.split(',').count();
    let mut rows = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split(',').map(str::to_owned).collect();
        if fields.len() != width {
            return Err(parse_err(
                path,
                i + 1,
                format!("expected {width} fields, found {}", fields.len()),
            ));
        }
        rows.push((i + 1, fields));
    }
    Ok(rows)
}

/// Prefixes a CSV body with `# key: value` lines. Every reader here skips them.
pub fn with_comments(csv: String, comments: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(csv.len() + 64);
    for (k, v) in comments {
        let _ = writeln!(out, "# {k}: {v}");
    }
    out.push_str(&csv);
    out
}

/// Leading `# key: value` lines of a CSV file.
pub fn read_comments(path: &Path) -> Result<Vec<(String, String)>> {
    let text = std::fs::read_to_string(path)?;
    Ok(text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .filter_map(|l| {
            let (k, v) = l.trim_start_matches('#').split_once(':')?;
            Some((k.trim().to_owned(), v.trim().to_owned()))
        })
        .collect())
}

pub const TRAJECTORY_HEADER: &str = "t,node,dim,value";

pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(traj.states().len() * 40);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    let d = traj.node_dim();
    for (k, state) in traj.iter().enumerate() {
        let t = fmt_real(k as f64 * traj.dt());
        for (idx, v) in state.iter().enumerate() {
            let _ = writeln!(out, "{t},{},{},{}", idx / d, idx % d, fmt_real(*v));
        }
    }
    out
}

pub fn write_trajectory(
    csv_path: &Path,
    meta_path: &Path,
    traj: &Trajectory,
    meta: &TrajectoryMeta,
) -> Result<()> {
    let csv = match &meta.config_hash {
        Some(h) => with_comments(trajectory_csv(traj), &[("config_hash", h)]),
        None => trajectory_csv(traj),
    };
    std::fs::write(csv_path, csv)?;
    std::fs::write(meta_path, serde_json::to_string_pretty(meta)?)?;
    Ok(())
}

pub fn read_trajectory_meta(meta_path: &Path) -> Result<TrajectoryMeta> {
    Ok(serde_json::from_str(&std::fs::read_to_string(meta_path)?)?)
}

/// Reads a trajectory CSV whose layout is described by `meta`.
pub fn read_trajectory(csv_path: &Path, meta: &TrajectoryMeta) -> Result<Trajectory> {
    let rows = read_rows(csv_path, TRAJECTORY_HEADER)?;
    let (n, d) = (meta.n_nodes, meta.node_dim);
    let w = n * d;
    if w == 0 || rows.len() % w != 0 {
        return Err(parse_err(
            csv_path,
            rows.last().map_or(1, |r| r.0),
            format!(
                "{} rows is not a whole number of {n} x {d} states",
                rows.len()
            ),
        ));
    }
    let mut states = Vec::with_capacity(rows.len());
    for (k, (line, f)) in rows.iter().enumerate() {
        let step = k / w;
        let (node, dim) = (
            parse_usize(csv_path, *line, &f[1])?,
            parse_usize(csv_path, *line, &f[2])?,
        );
        if node != (k % w) / d || dim != k % d {
            return Err(parse_err(
                csv_path,
                *line,
                format!("rows out of order at step {step}"),
            ));
        }
        let t = parse_f64(csv_path, *line, &f[0])?;
        if (t - step as f64 * meta.dt).abs() > 1e-9 * (1.0 + t.abs()) {
            return Err(parse_err(
                csv_path,
                *line,
                format!("time {t} does not match step {step}"),
            ));
        }
        states.push(parse_f64(csv_path, *line, &f[3])?);
    }
    Trajectory::new(meta.dt, n, d, states)
}

pub const PHASE_PORTRAIT_HEADER: &str = "t,node,x,v";

pub fn phase_portrait_csv(traj: &Trajectory) -> Result<String> {
    if traj.node_dim() != 2 {
        return Err(Error::Invalid(format!(
            "phase portraits need (x, v) nodes, trajectory has dimension {}",
            traj.node_dim()
        )));
    }
    let mut out = String::with_capacity(traj.states().len() * 30);
    out.push_str(PHASE_PORTRAIT_HEADER);
    out.push('\n');
    for (k, state) in traj.iter().enumerate() {
        let t = fmt_real(k as f64 * traj.dt());
        for (i, xv) in state.chunks_exact(2).enumerate() {
            let _ = writeln!(out, "{t},{i},{},{}", fmt_real(xv[0]), fmt_real(xv[1]));
        }
    }
    Ok(out)
}

/// Writes `t,node,x,v` rows for external plotting.
pub fn export_phase_portrait(path: &Path, traj: &Trajectory) -> Result<()> {
    std::fs::write(path, phase_portrait_csv(traj)?)?;
    Ok(())
}

pub fn import_phase_portrait(path: &Path, dt: f64) -> Result<Trajectory> {
    let rows = read_rows(path, PHASE_PORTRAIT_HEADER)?;
    let mut n = 0;
    for (line, f) in &rows {
        let node = parse_usize(path, *line, &f[1])?;
        if node == 0 && n > 0 {
            break;
        }
        n = node + 1;
    }
    if n == 0 || rows.len() % n != 0 {
        return Err(parse_err(path, 1, "cannot infer node count"));
    }
    let mut states = Vec::with_capacity(rows.len() * 2);
    for (k, (line, f)) in rows.iter().enumerate() {
        if parse_usize(path, *line, &f[1])? != k % n {
            return Err(parse_err(path, *line, "rows out of order"));
        }
        states.push(parse_f64(path, *line, &f[2])?);
        states.push(parse_f64(path, *line, &f[3])?);
    }
    Trajectory::new(dt, n, 2, states)
}

pub const METRICS_HEADER: &str = "alpha,a_l1,mse_train,mse_dev,mse_test,adj_l2_err,adj_exact_match";

pub fn metrics_csv(rows: &[RunMetrics]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for m in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            fmt_real(m.alpha),
            fmt_real(m.a_l1),
            fmt_real(m.mse_train),
            fmt_real(m.mse_dev),
            fmt_real(m.mse_test),
            m.adj_l2_err.map(fmt_real).unwrap_or_default(),
            m.adj_exact_match.map(|b| b.to_string()).unwrap_or_default(),
        );
    }
    out
}

pub fn read_metrics(path: &Path) -> Result<Vec<RunMetrics>> {
    read_rows(path, METRICS_HEADER)?
        .into_iter()
        .map(|(line, f)| {
            let opt_f = |s: &str| -> Result<Option<f64>> {
                if s.trim().is_empty() {
                    Ok(None)
                } else {
                    parse_f64(path, line, s).map(Some)
                }
            };
            let exact = match f[6].trim() {
                "" => None,
                "true" => Some(true),
                "false" => Some(false),
                other => return Err(parse_err(path, line, format!("`{other}` is not a boolean"))),
            };
            Ok(RunMetrics {
                alpha: parse_f64(path, line, &f[0])?,
                a_l1: parse_f64(path, line, &f[1])?,
                mse_train: parse_f64(path, line, &f[2])?,
                mse_dev: parse_f64(path, line, &f[3])?,
                mse_test: parse_f64(path, line, &f[4])?,
                adj_l2_err: opt_f(&f[5])?,
                adj_exact_match: exact,
                adj_hamming: None,
            })
        })
        .collect()
}

pub const LOSS_LOG_HEADER: &str = "epoch,phase,loss,penalty";

pub fn loss_log_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from(LOSS_LOG_HEADER);
    out.push('\n');
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{}",
            r.epoch,
            r.phase,
            fmt_real(r.loss),
            fmt_real(r.penalty)
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{oscillator_rhs, random_initial_condition, simulate};

    fn sample() -> (Trajectory, TrajectoryMeta) {
        let a = AdjacencyMatrix::cycle3();
        let p = OscillatorParams::default();
        let x0 = random_initial_condition(3, 2, 5);
        let traj = simulate(|s: &[f64]| oscillator_rhs(s, &a, &p), &x0, 2, 40, 0.1).unwrap();
        let meta = TrajectoryMeta {
            dt: 0.1,
            n_nodes: 3,
            node_dim: 2,
            samples: traj.len(),
            system: SystemSpec::Oscillator(p),
            adjacency: a,
            seed: 5,
            config_hash: None,
        };
        (traj, meta)
    }

    #[test]
    fn trajectory_roundtrip_bit_exact() {
        let (traj, meta) = sample();
        let dir = tempfile::tempdir().unwrap();
        let (csv, json) = (dir.path().join("t.csv"), dir.path().join("t.json"));
        write_trajectory(&csv, &json, &traj, &meta).unwrap();
        let meta2 = read_trajectory_meta(&json).unwrap();
        assert_eq!(meta2, meta);
        assert_eq!(read_trajectory(&csv, &meta2).unwrap(), traj);
        let text = std::fs::read_to_string(&csv).unwrap();
        assert_eq!(text.lines().count(), 1 + 41 * 6);
        assert!(text.starts_with("t,node,dim,value\n0.0000000000000000e0,0,0,"));
    }

    #[test]
    fn phase_portrait_format() {
        let (traj, _) = sample();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pp.csv");
        export_phase_portrait(&path, &traj).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some("t,node,x,v"));
        assert_eq!(lines.count(), traj.len() * 3);
        assert_eq!(import_phase_portrait(&path, 0.1).unwrap(), traj);
    }

    #[test]
    fn malformed_csv_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        std::fs::write(&path, "t,node,x,v\n0.0,0,1.0,2.0\n0.0,1,oops,2.0\n").unwrap();
        let err = import_phase_portrait(&path, 0.1).unwrap_err().to_string();
        assert!(err.contains(":3:"), "{err}");
    }

    #[test]
    fn metrics_roundtrip() {
        let rows = vec![RunMetrics {
            alpha: 1e-5,
            a_l1: 23.82,
            mse_train: 0.00643,
            mse_dev: 0.00911,
            mse_test: 0.00905,
            adj_l2_err: Some(0.1 + 0.2),
            adj_exact_match: Some(true),
            adj_hamming: None,
        }];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(&path, metrics_csv(&rows)).unwrap();
        assert_eq!(read_metrics(&path).unwrap(), rows);
    }
}
