//! CSV readers and writers for campaign artifacts.
//!
//! All floats are written with Rust's shortest round-trip formatting, so
//! files are byte-reproducible for identical runs and every summary value
//! can be recomputed exactly from the columns it came from.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use crate::barrier::BarrierFunction;
use crate::dynamics::{State, Trajectory};
use crate::episodic::{EpisodeReport, StepFlags};
use crate::learning::{Dataset, Record};
use crate::{Error, Result};

pub const TRAJECTORY_HEADER: &str = "t,x_pos,x_vel,theta,theta_dot,u,h,active,infeasible";
pub const DATASET_HEADER: &str = "episode,t,x_pos,x_vel,theta,theta_dot,u,hdot";

fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes()).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Trajectory with per-step barrier values and filter flags.
///
/// One row per sampled state. The input and flag columns describe the
/// interval starting at that row's time; the final row repeats the last held
/// values since no interval follows it.
pub fn write_trajectory_csv(
    path: &Path,
    traj: &Trajectory,
    bf: &BarrierFunction,
    flags: &[StepFlags],
) -> Result<()> {
    let mut out = String::new();
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for (i, (t, s)) in traj.times.iter().zip(&traj.states).enumerate() {
        let k = i.min(traj.inputs.len().saturating_sub(1));
        let u = traj.inputs.get(k).copied().unwrap_or(0.0);
        let fl = flags.get(k).copied().unwrap_or_default();
        let _ = writeln!(
            out,
            "{t},{},{},{},{},{u},{},{},{}",
            s.x_pos,
            s.x_vel,
            s.theta,
            s.theta_dot,
            bf.value(s),
            fl.active as u8,
            fl.infeasible as u8
        );
    }
    write_file(path, &out)
}

/// Columns read back from a trajectory CSV for plotting and checks.
#[derive(Debug, Clone, Default)]
pub struct TrajectoryColumns {
    pub t: Vec<f64>,
    pub theta: Vec<f64>,
    pub theta_dot: Vec<f64>,
    pub h: Vec<f64>,
}

pub fn read_trajectory_csv(path: &Path) -> Result<TrajectoryColumns> {
    let text = read_file(path)?;
    let bad = |reason: String| Error::Malformed { path: path.to_path_buf(), reason };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| bad("empty file".into()))?;
    let names: Vec<&str> = header.split(',').collect();
    let col = |name: &str| names.iter().position(|n| *n == name);
    let (it, ith, ithd) = match (col("t"), col("theta"), col("theta_dot")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(bad(format!("missing required columns in header `{header}`"))),
    };
    let ih = col("h");

    let mut cols = TrajectoryColumns::default();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        let get = |i: usize| -> Result<f64> {
            fields
                .get(i)
                .and_then(|f| f.parse::<f64>().ok())
                .ok_or_else(|| bad(format!("bad numeric field at line {}", ln + 2)))
        };
        cols.t.push(get(it)?);
        cols.theta.push(get(ith)?);
        cols.theta_dot.push(get(ithd)?);
        if let Some(i) = ih {
            cols.h.push(get(i)?);
        }
    }
    Ok(cols)
}

pub fn write_dataset_csv(path: &Path, data: &Dataset) -> Result<()> {
    let mut out = String::new();
    out.push_str(DATASET_HEADER);
    out.push('\n');
    for r in &data.records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            r.episode, r.t, r.state.x_pos, r.state.x_vel, r.state.theta, r.state.theta_dot,
            r.input, r.hdot
        );
    }
    write_file(path, &out)
}

pub fn read_dataset_csv(path: &Path) -> Result<Dataset> {
    let text = read_file(path)?;
    let bad = |reason: String| Error::Malformed { path: path.to_path_buf(), reason };
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == DATASET_HEADER => {}
        other => return Err(bad(format!("expected header `{DATASET_HEADER}`, got {other:?}"))),
    }
    let mut records = Vec::new();
    for (ln, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(bad(format!("expected 8 fields at line {}", ln + 2)));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i].parse().map_err(|_| bad(format!("bad numeric field at line {}", ln + 2)))
        };
        let episode: u32 = fields[0]
            .parse()
            .map_err(|_| bad(format!("bad episode index at line {}", ln + 2)))?;
        records.push(Record {
            episode,
            t: num(1)?,
            state: State::new(num(2)?, num(3)?, num(4)?, num(5)?),
            input: num(6)?,
            hdot: num(7)?,
        });
    }
    Ok(Dataset { records })
}

pub fn write_x0_csv(path: &Path, x0s: &[State]) -> Result<()> {
    let mut out = String::from("index,x_pos,x_vel,theta,theta_dot\n");
    for (i, s) in x0s.iter().enumerate() {
        let _ = writeln!(out, "{i},{},{},{},{}", s.x_pos, s.x_vel, s.theta, s.theta_dot);
    }
    write_file(path, &out)
}

pub fn write_report_csv(path: &Path, report: &EpisodeReport) -> Result<()> {
    let mut out = String::from(
        "episode,min_h,frac_unsafe,records_added,cumulative_records,trained_on_records,final_train_mae,validation_mae,infeasible_steps,blew_up,trust\n",
    );
    for e in &report.episodes {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            e.episode,
            e.min_h,
            e.frac_unsafe,
            e.records_added,
            e.cumulative_records,
            e.trained_on_records,
            e.epoch_loss.last().copied().unwrap_or(f64::NAN),
            e.validation_loss.map(|v| v.to_string()).unwrap_or_default(),
            e.infeasible_steps,
            e.blew_up as u8,
            e.trust
        );
    }
    write_file(path, &out)
}

pub fn write_loss_csv(path: &Path, epoch_loss: &[f64]) -> Result<()> {
    let mut out = String::from("epoch,train_mae\n");
    for (i, l) in epoch_loss.iter().enumerate() {
        let _ = writeln!(out, "{},{l}", i + 1);
    }
    write_file(path, &out)
}

/// One row per evaluated rollout plus one aggregate row per phase.
pub fn write_summary_csv(
    path: &Path,
    rows: &[(String, usize, f64, bool)],
    aggregates: &[(String, f64)],
) -> Result<()> {
    let mut out = String::from("phase,x0_index,min_h,blew_up\n");
    for (phase, idx, min_h, blew) in rows {
        let _ = writeln!(out, "{phase},{idx},{min_h},{}", *blew as u8);
    }
    for (phase, min_h) in aggregates {
        let _ = writeln!(out, "{phase},all,{min_h},");
    }
    write_file(path, &out)
}
