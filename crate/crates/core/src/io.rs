//! Trajectory CSV files (`t,x,y,z[,action]`) and line-delimited JSON streams.

use std::fs::File;
use std::io::{BufRead, Read, Write};
use std::path::Path;

use serde::Deserialize;

use crate::datagen::Trajectory;
use crate::error::{Error, Result};
use crate::pipeline::Measurement;

pub const TRAJECTORY_HEADER: [&str; 5] = ["t", "x", "y", "z", "action"];

#[derive(Debug, Deserialize)]
struct Row {
    t: f64,
    x: f64,
    y: f64,
    z: f64,
    #[serde(default)]
    action: Option<i64>,
}

/// Parse a trajectory CSV. The action label of the trajectory is taken from the
/// first row carrying one (0 when the column is absent).
pub fn read_trajectory<R: Read>(reader: R) -> Result<Trajectory> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    for required in &TRAJECTORY_HEADER[..4] {
        if !headers.iter().any(|h| h == *required) {
            return Err(Error::parse(
                "header",
                format!("missing column {required:?}"),
            ));
        }
    }
    let mut timestamps = Vec::new();
    let mut positions = Vec::new();
    let mut action = None;
    for (i, row) in rdr.deserialize::<Row>().enumerate() {
        let row = row.map_err(|e| Error::parse(format!("row {}", i + 1), e.to_string()))?;
        timestamps.push(row.t);
        positions.push([row.x, row.y, row.z]);
        action = action.or(row.action);
    }
    Trajectory::new(timestamps, positions, action.unwrap_or(0))
}

pub fn read_trajectory_file(path: impl AsRef<Path>) -> Result<Trajectory> {
    let path = path.as_ref();
    let file = File::open(path)
        .map_err(|e| Error::Input(format!("cannot open {}: {e}", path.display())))?;
    read_trajectory(file)
}

pub fn write_trajectory<W: Write>(traj: &Trajectory, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(TRAJECTORY_HEADER)?;
    for (t, p) in traj.timestamps.iter().zip(&traj.positions) {
        w.write_record([
            t.to_string(),
            p[0].to_string(),
            p[1].to_string(),
            p[2].to_string(),
            traj.action_label.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_trajectory_file(traj: &Trajectory, path: impl AsRef<Path>) -> Result<()> {
    write_trajectory(traj, File::create(path)?)
}

/// Measurements of a trajectory in order.
pub fn measurements(traj: &Trajectory) -> impl Iterator<Item = Measurement> + '_ {
    traj.timestamps
        .iter()
        .zip(&traj.positions)
        .map(|(&t, &position)| Measurement {
            t,
            position,
            action: traj.action_label,
        })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRecord {
    t: f64,
    position: [f64; 3],
    #[serde(default)]
    action: i64,
}

/// Read measurements from either a trajectory CSV or line-delimited JSON
/// records `{"t":..,"position":[x,y,z],"action":..}`. The format is chosen
/// from the first non-blank character.
pub fn read_measurements<R: BufRead>(mut reader: R) -> Result<Vec<Measurement>> {
    let mut text = String::new();
    reader.read_to_string(&mut text)?;
    let first = text.trim_start().chars().next();
    if first == Some('{') {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, line)| {
                let r: JsonRecord = serde_json::from_str(line)
                    .map_err(|e| Error::parse(format!("line {}", i + 1), e.to_string()))?;
                Ok(Measurement {
                    t: r.t,
                    position: r.position,
                    action: r.action,
                })
            })
            .collect()
    } else {
        let traj = read_trajectory(text.as_bytes())?;
        Ok(measurements(&traj).collect())
    }
}
