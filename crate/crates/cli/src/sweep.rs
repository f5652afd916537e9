//! Sweep execution over (latent dimension, transmission power, training
//! period, seed) grids.
//!
//! Every cell derives its own seed from the master seed and its grid
//! coordinates, so results do not depend on sweep ordering or on how many
//! workers run concurrently. Failed cells become rows with NaN RMSE; the
//! sweep carries on.

use crate::config::SweepSpec;
use crate::{CliError, CliResult};
use koopmon::monitor::{run_monitoring, MonitoringConfig, MonitoringResult};
use koopmon::seeding;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::time::Instant;

/// One sweep cell result; `rmse` is NaN when the run failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub q: usize,
    pub power_watts: f64,
    pub period_s: f64,
    pub seed: u64,
    pub rmse: f64,
    pub rmse_db: f64,
    pub epochs: usize,
    pub wall_s: f64,
}

impl SweepRow {
    /// Equality that treats NaN as equal to NaN (for round-trip checks).
    pub fn same_as(&self, other: &SweepRow) -> bool {
        let feq = |a: f64, b: f64| a.to_bits() == b.to_bits() || (a.is_nan() && b.is_nan());
        self.q == other.q
            && feq(self.power_watts, other.power_watts)
            && feq(self.period_s, other.period_s)
            && self.seed == other.seed
            && feq(self.rmse, other.rmse)
            && feq(self.rmse_db, other.rmse_db)
            && self.epochs == other.epochs
            && feq(self.wall_s, other.wall_s)
    }
}

/// All rows of a sweep, ordered by (q, power, period, seed).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

impl SweepTable {
    pub fn same_as(&self, other: &SweepTable) -> bool {
        self.rows.len() == other.rows.len()
            && self.rows.iter().zip(&other.rows).all(|(a, b)| a.same_as(b))
    }
}

/// Aggregate over the seeds of one cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub q: usize,
    pub power_watts: f64,
    pub period_s: f64,
    pub n: usize,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub rmse_db_mean: f64,
    pub rmse_db_std: f64,
    pub n_failed: usize,
}

/// A full sweep outcome: the table plus per-run artifacts for emission.
pub struct SweepOutcome {
    pub table: SweepTable,
    /// Successful runs, index-aligned with the table rows (failed rows hold
    /// `None`).
    pub results: Vec<Option<MonitoringResult>>,
    /// Human-readable failure notes.
    pub failures: Vec<String>,
}

/// Configuration of one cell, with its order-independent derived seed.
pub fn cell_config(
    base: &MonitoringConfig,
    q: usize,
    power: f64,
    period: f64,
    seed: u64,
) -> MonitoringConfig {
    let mut cfg = base.clone();
    cfg.latent_dim = q;
    cfg.channel.tx_power = power;
    cfg.phase1_duration_s = period;
    cfg.master_seed = seeding::cell_seed(base.master_seed, q, power, period, seed);
    cfg
}

/// Runs every cell of the grid, `jobs` at a time (defaults to the number
/// of CPUs).
pub fn run_sweep(spec: &SweepSpec, jobs: Option<usize>) -> CliResult<SweepOutcome> {
    spec.validate()?;
    spec.base.validate().map_err(CliError::from)?;

    let mut cells = Vec::new();
    for &q in &spec.latent_dims {
        for &power in &spec.tx_powers_watts {
            for &period in &spec.training_periods_s {
                for &seed in &spec.seeds {
                    cells.push((q, power, period, seed));
                }
            }
        }
    }

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))?;

    let outcomes: Vec<(SweepRow, Option<MonitoringResult>, Option<String>)> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(q, power, period, seed)| {
                let cfg = cell_config(&spec.base, q, power, period, seed);
                let start = Instant::now();
                match run_monitoring(&cfg) {
                    Ok(result) => (
                        SweepRow {
                            q,
                            power_watts: power,
                            period_s: period,
                            seed,
                            rmse: result.rmse,
                            rmse_db: result.rmse_db,
                            epochs: result.epochs_ran,
                            wall_s: start.elapsed().as_secs_f64(),
                        },
                        Some(result),
                        None,
                    ),
                    Err(e) => (
                        SweepRow {
                            q,
                            power_watts: power,
                            period_s: period,
                            seed,
                            rmse: f64::NAN,
                            rmse_db: f64::NAN,
                            epochs: 0,
                            wall_s: start.elapsed().as_secs_f64(),
                        },
                        None,
                        Some(format!(
                            "cell (q={q}, P={power} W, T={period} s, seed={seed}): {e}"
                        )),
                    ),
                }
            })
            .collect()
    });

    let mut indexed: Vec<(SweepRow, Option<MonitoringResult>, Option<String>)> = outcomes;
    indexed.sort_by(|a, b| {
        let ka = (
            a.0.q,
            a.0.power_watts.to_bits(),
            a.0.period_s.to_bits(),
            a.0.seed,
        );
        let kb = (
            b.0.q,
            b.0.power_watts.to_bits(),
            b.0.period_s.to_bits(),
            b.0.seed,
        );
        ka.cmp(&kb)
    });

    let mut table = SweepTable::default();
    let mut results = Vec::with_capacity(indexed.len());
    let mut failures = Vec::new();
    for (row, result, failure) in indexed {
        table.rows.push(row);
        results.push(result);
        if let Some(f) = failure {
            failures.push(f);
        }
    }
    Ok(SweepOutcome {
        table,
        results,
        failures,
    })
}

/// Per-cell mean/stddev aggregation (NaN rows counted as failures).
pub fn summarize(table: &SweepTable) -> Vec<SummaryRow> {
    let mut out: Vec<SummaryRow> = Vec::new();
    for row in &table.rows {
        let key = (row.q, row.power_watts.to_bits(), row.period_s.to_bits());
        if !out
            .iter()
            .any(|s| (s.q, s.power_watts.to_bits(), s.period_s.to_bits()) == key)
        {
            let group: Vec<&SweepRow> = table
                .rows
                .iter()
                .filter(|r| (r.q, r.power_watts.to_bits(), r.period_s.to_bits()) == key)
                .collect();
            let ok: Vec<&&SweepRow> = group.iter().filter(|r| !r.rmse.is_nan()).collect();
            let stats = |f: &dyn Fn(&SweepRow) -> f64| -> (f64, f64) {
                if ok.is_empty() {
                    return (f64::NAN, f64::NAN);
                }
                let n = ok.len() as f64;
                let mean = ok.iter().map(|r| f(r)).sum::<f64>() / n;
                let var = ok.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / n;
                (mean, var.sqrt())
            };
            let (rmse_mean, rmse_std) = stats(&|r| r.rmse);
            let (rmse_db_mean, rmse_db_std) = stats(&|r| r.rmse_db);
            out.push(SummaryRow {
                q: row.q,
                power_watts: row.power_watts,
                period_s: row.period_s,
                n: ok.len(),
                rmse_mean,
                rmse_std,
                rmse_db_mean,
                rmse_db_std,
                n_failed: group.len() - ok.len(),
            });
        }
    }
    out
}
