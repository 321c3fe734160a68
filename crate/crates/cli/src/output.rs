//! Trajectory and metrics writers. Every file is written to a temporary
//! sibling and renamed into place.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use haes::harness::{RunResult, TrajectoryRow};
use serde::Serialize;
use serde_json::{json, Value};
use tempfile::NamedTempFile;

use crate::CliError;

/// Writes `fill` into `path` atomically.
pub fn atomic_write(path: &Path, fill: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let tmp = NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    {
        let mut w = BufWriter::new(tmp.as_file());
        fill(&mut w).map_err(|e| CliError::io(path, e))?;
        w.flush().map_err(|e| CliError::io(path, e))?;
    }
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

fn header(row: &TrajectoryRow<'_>) -> String {
    let mut cols = vec!["t".to_string(), "j".into(), "tau".into()];
    let mut push = |name: &str, len: usize| cols.extend((0..len).map(|i| format!("{name}_{i}")));
    push("x1", row.x1.len());
    push("x2", row.x2.len());
    push("mu", row.mu.len());
    push("z", row.z.len());
    cols.push("phi".into());
    cols.push("subopt".into());
    cols.join(",")
}

fn num(v: f64) -> String {
    format!("{v:.16e}")
}

fn line(row: &TrajectoryRow<'_>) -> String {
    let mut cells = vec![num(row.t), row.j.to_string(), num(row.tau)];
    for part in [row.x1, row.x2, row.mu, &row.z] {
        cells.extend(part.iter().copied().map(num));
    }
    cells.push(num(row.phi));
    cells.push(num(row.subopt));
    cells.join(",")
}

/// One CSV row per stored sample of the run's arc.
pub fn write_trajectory(path: &Path, run: &RunResult) -> Result<usize, CliError> {
    let mut count = 0;
    atomic_write(path, |w| {
        let mut rows = run.rows().peekable();
        if let Some(first) = rows.peek() {
            writeln!(w, "{}", header(first))?;
        }
        for row in rows {
            writeln!(w, "{}", line(&row))?;
            count += 1;
        }
        Ok(())
    })?;
    Ok(count)
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| CliError::Parse(e.to_string()))?;
    atomic_write(path, |w| writeln!(w, "{text}"))
}

/// Metrics of one run with its label.
pub fn run_metrics(run: &RunResult) -> Value {
    let mut v = serde_json::to_value(&run.metrics).expect("metrics serialize");
    v["label"] = json!(run.label);
    v
}
