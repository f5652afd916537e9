//! Result emission: sweep tables and per-run artifacts.
//!
//! Files are written atomically (temp file + rename) so a concurrent or
//! interrupted sweep never leaves a half-written artifact. Floats are
//! formatted at full round-trip precision; parsing an emitted `sweep.csv`
//! reproduces the table exactly.

use crate::sweep::{summarize, SweepOutcome, SweepRow, SweepTable};
use crate::{CliError, CliResult};
use koopmon::monitor::MonitoringResult;
use std::fs;
use std::path::Path;

pub const SWEEP_CSV_HEADER: &str = "q,power_watts,period_s,seed,rmse,rmse_db,epochs,wall_s";

/// Writes `content` to `path` atomically.
pub fn write_atomic(path: &Path, content: &[u8]) -> CliResult<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "artifact".into())
    ));
    fs::write(&tmp, content)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn sweep_csv(table: &SweepTable) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in &table.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.q, r.power_watts, r.period_s, r.seed, r.rmse, r.rmse_db, r.epochs, r.wall_s
        ));
    }
    out
}

/// Parses a `sweep.csv` back into a table.
pub fn parse_sweep_csv(text: &str) -> CliResult<SweepTable> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == SWEEP_CSV_HEADER => {}
        other => {
            return Err(CliError::Config(format!(
                "unexpected sweep.csv header: {other:?}"
            )))
        }
    }
    let mut table = SweepTable::default();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(CliError::Config(format!(
                "sweep.csv line {}: expected 8 fields, got {}",
                i + 2,
                fields.len()
            )));
        }
        let parse_f = |s: &str| -> CliResult<f64> {
            s.parse()
                .map_err(|e| CliError::Config(format!("sweep.csv line {}: {e}", i + 2)))
        };
        let parse_u = |s: &str| -> CliResult<u64> {
            s.parse()
                .map_err(|e| CliError::Config(format!("sweep.csv line {}: {e}", i + 2)))
        };
        table.rows.push(SweepRow {
            q: parse_u(fields[0])? as usize,
            power_watts: parse_f(fields[1])?,
            period_s: parse_f(fields[2])?,
            seed: parse_u(fields[3])?,
            rmse: parse_f(fields[4])?,
            rmse_db: parse_f(fields[5])?,
            epochs: parse_u(fields[6])? as usize,
            wall_s: parse_f(fields[7])?,
        });
    }
    Ok(table)
}

pub fn summary_csv(table: &SweepTable) -> String {
    let mut out = String::from(
        "q,power_watts,period_s,n,rmse_mean,rmse_std,rmse_db_mean,rmse_db_std,n_failed\n",
    );
    for s in summarize(table) {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            s.q,
            s.power_watts,
            s.period_s,
            s.n,
            s.rmse_mean,
            s.rmse_std,
            s.rmse_db_mean,
            s.rmse_db_std,
            s.n_failed
        ));
    }
    out
}

fn run_dir_name(row: &SweepRow) -> String {
    format!(
        "q{}_p{}_t{}_s{}",
        row.q, row.power_watts, row.period_s, row.seed
    )
}

/// Writes the artifacts of one monitoring run into `dir`: the result
/// record, the epoch history and the phase-2 trajectories.
pub fn emit_run(result: &MonitoringResult, dir: &Path) -> CliResult<()> {
    let record =
        serde_json::to_string_pretty(result).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_atomic(&dir.join("result.json"), record.as_bytes())?;

    let mut history = Vec::new();
    result
        .history
        .write_jsonl(&mut history)
        .map_err(CliError::from)?;
    write_atomic(&dir.join("history.jsonl"), &history)?;

    let mut trajectories = Vec::new();
    result
        .write_trajectories_csv(&mut trajectories)
        .map_err(CliError::from)?;
    write_atomic(&dir.join("trajectories.csv"), &trajectories)?;
    Ok(())
}

/// Writes the whole sweep output tree:
///
/// ```text
/// out/
///   sweep.csv
///   summary.csv
///   runs/<q>_<power>_<period>_<seed>/{result.json, history.jsonl, trajectories.csv}
/// ```
pub fn emit_sweep(outcome: &SweepOutcome, out_dir: &Path) -> CliResult<()> {
    write_atomic(
        &out_dir.join("sweep.csv"),
        sweep_csv(&outcome.table).as_bytes(),
    )?;
    write_atomic(
        &out_dir.join("summary.csv"),
        summary_csv(&outcome.table).as_bytes(),
    )?;
    for (row, result) in outcome.table.rows.iter().zip(&outcome.results) {
        if let Some(result) = result {
            emit_run(result, &out_dir.join("runs").join(run_dir_name(row)))?;
        }
    }
    Ok(())
}
