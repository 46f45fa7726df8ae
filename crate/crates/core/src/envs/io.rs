//! Canonical dataset file format: CSV with one record per (trajectory, step)
//! and the column order documented in the header line:
//!
//! `trajectory_id,t,action,reward,logged_propensity,f{a}_{j},...`
//!
//! Feature columns are action-major (`f{a}_{j}` is coordinate `j` of action
//! `a`'s feature vector). A missing logged propensity is an empty field.
//! Discrete state ids are not serialized; datasets loaded from a file serve
//! feature-based policies only.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::{Context, Dataset, StepRecord, Trajectory};
use crate::error::{OpeError, Result};

/// Writes a dataset in the canonical CSV layout. Floats are written with the
/// shortest representation that round-trips exactly.
pub fn write_dataset_csv<P: AsRef<Path>>(data: &Dataset, path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = BufWriter::new(file);
    let k = data.action_count();
    let d = data.trajectory(0).step(0).context.feat_dim();
    write!(out, "trajectory_id,t,action,reward,logged_propensity")?;
    for a in 0..k {
        for j in 0..d {
            write!(out, ",f{a}_{j}")?;
        }
    }
    writeln!(out)?;
    for (i, traj) in data.trajectories().iter().enumerate() {
        for (t, step) in traj.steps().iter().enumerate() {
            write!(out, "{i},{t},{},{}", step.action, step.reward)?;
            match step.logged_propensity {
                Some(p) => write!(out, ",{p}")?,
                None => write!(out, ",")?,
            }
            for a in 0..k {
                for &v in step.context.action_features(a) {
                    write!(out, ",{v}")?;
                }
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset_csv`]; the discount is not part
/// of the file format and must be supplied.
pub fn read_dataset_csv<P: AsRef<Path>>(path: P, discount: f64) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    let mut lines = BufReader::new(file).lines();
    let header = lines
        .next()
        .ok_or_else(|| OpeError::Schema("empty dataset file".into()))??;
    let columns: Vec<&str> = header.split(',').collect();
    if columns.len() < 6 || columns[..5] != ["trajectory_id", "t", "action", "reward", "logged_propensity"]
    {
        return Err(OpeError::Schema("unrecognized dataset header".into()));
    }
    // Feature columns are named f{a}_{j}; the last one fixes K and d.
    let last = columns.last().expect("nonempty");
    let (k, d) = parse_feature_name(last)
        .map(|(a, j)| (a + 1, j + 1))
        .ok_or_else(|| OpeError::Schema(format!("bad feature column {last:?}")))?;
    if columns.len() != 5 + k * d {
        return Err(OpeError::Schema(format!(
            "expected {} columns for {k} actions x {d} features, found {}",
            5 + k * d,
            columns.len()
        )));
    }

    let mut rows: Vec<(usize, usize, StepRecord)> = Vec::new();
    for (line_no, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != columns.len() {
            return Err(OpeError::Schema(format!(
                "line {}: {} fields, expected {}",
                line_no + 2,
                fields.len(),
                columns.len()
            )));
        }
        let parse_err = |what: &str| OpeError::Schema(format!("line {}: bad {what}", line_no + 2));
        let traj: usize = fields[0].parse().map_err(|_| parse_err("trajectory_id"))?;
        let t: usize = fields[1].parse().map_err(|_| parse_err("t"))?;
        let action: usize = fields[2].parse().map_err(|_| parse_err("action"))?;
        let reward: f64 = fields[3].parse().map_err(|_| parse_err("reward"))?;
        let logged_propensity = if fields[4].is_empty() {
            None
        } else {
            Some(fields[4].parse().map_err(|_| parse_err("logged_propensity"))?)
        };
        let mut feats = Vec::with_capacity(k * d);
        for f in &fields[5..] {
            feats.push(f.parse::<f64>().map_err(|_| parse_err("feature"))?);
        }
        let context = Context::from_flat(feats, d)?;
        rows.push((
            traj,
            t,
            StepRecord {
                context,
                action,
                reward,
                logged_propensity,
            },
        ));
    }
    rows.sort_by_key(|(traj, t, _)| (*traj, *t));

    let mut trajectories = Vec::new();
    let mut current: Vec<StepRecord> = Vec::new();
    let mut current_id: Option<usize> = None;
    for (traj, t, record) in rows {
        if current_id != Some(traj) {
            if let Some(_) = current_id {
                trajectories.push(Trajectory::new(std::mem::take(&mut current))?);
            }
            current_id = Some(traj);
        }
        if t != current.len() {
            return Err(OpeError::Schema(format!(
                "trajectory {traj}: step {t} out of order (expected {})",
                current.len()
            )));
        }
        current.push(record);
    }
    if current.is_empty() {
        return Err(OpeError::Schema("dataset file has no records".into()));
    }
    trajectories.push(Trajectory::new(current)?);
    Dataset::new(trajectories, discount)
}

fn parse_feature_name(name: &str) -> Option<(usize, usize)> {
    let rest = name.strip_prefix('f')?;
    let (a, j) = rest.split_once('_')?;
    Some((a.parse().ok()?, j.parse().ok()?))
}
