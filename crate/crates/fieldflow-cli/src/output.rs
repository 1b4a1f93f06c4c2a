//! Writing a run to disk.
//!
//! A run directory holds `diagnostics.csv` next to `manifest.toml`. Field
//! dumps go to `snapshots/` when enabled. Floats are written in shortest
//! round-trip form, so identical configurations give byte-identical files.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use fieldflow::dynamics::PontryaginState;
use fieldflow::exterior::FormField;
use fieldflow::grid::RectGrid;
use fieldflow::Real;

use crate::config::ScenarioConfig;
use crate::error::CliError;
use crate::scenario::{Row, RunResult, Scenario};

pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const MANIFEST_FILE: &str = "manifest.toml";
pub const SNAPSHOT_DIR: &str = "snapshots";

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

fn cell(v: Option<Real>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

fn record(row: &Row) -> Vec<String> {
    let mut r = vec![
        row.t.to_string(),
        row.energy.to_string(),
        row.energy_matter.to_string(),
        row.energy_gauge.to_string(),
        row.power_interior.to_string(),
    ];
    r.extend(row.power_boundary.iter().map(Real::to_string));
    r.push(row.power_interaction_gauge.to_string());
    r.push(row.power_interaction_matter.to_string());
    r.push(cell(row.balance_residual));
    r.push(cell(row.local_balance_residual));
    r.push(row.boundary_residual.to_string());
    r.extend(row.charge.iter().map(Real::to_string));
    r.push(cell(row.charge_residual));
    r.push(cell(row.bianchi_residual));
    r.push(cell(row.bianchi_rate_residual));
    r.push(cell(row.rep_difference));
    r
}

/// Writes the diagnostics table, keeping every `every`-th row and the last.
pub fn write_diagnostics(result: &RunResult, every: usize, path: &Path) -> Result<(), CliError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(result.header())?;
    let last = result.rows.len().saturating_sub(1);
    for (i, row) in result.rows.iter().enumerate() {
        if i % every.max(1) == 0 || i == last {
            w.write_record(record(row))?;
        }
    }
    w.flush().map_err(|source| CliError::Write { path: path.to_path_buf(), source })
}

/// The configuration echo plus a `[manifest]` table describing the run.
pub fn manifest(scenario: &Scenario, result: &RunResult) -> String {
    let mut cfg = scenario.config.clone();
    let mut table = toml::Table::new();
    table.insert("program".into(), env!("CARGO_PKG_NAME").into());
    table.insert("version".into(), env!("CARGO_PKG_VERSION").into());
    table.insert("dt".into(), scenario.dt.into());
    table.insert("steps".into(), (scenario.steps as i64).into());
    table.insert("rows".into(), (result.rows.len() as i64).into());
    table.insert("energy_drift".into(), result.summary.energy_drift().into());
    cfg.manifest = Some(table);
    cfg.to_toml()
}

fn write_field(grid: &RectGrid, field: &FormField, path: PathBuf) -> Result<(), CliError> {
    let file = File::create(&path).map_err(|source| CliError::Write { path: path.clone(), source })?;
    let mut w = BufWriter::new(file);
    field
        .write_dump(grid, &mut w)
        .and_then(|_| w.flush())
        .map_err(|source| CliError::Write { path, source })
}

fn write_snapshot(grid: &RectGrid, dir: &Path, step: usize, state: &PontryaginState) -> Result<(), CliError> {
    let sectors = [("matter", state.matter.as_ref()), ("gauge", state.gauge.as_ref())];
    for (name, s) in sectors {
        if let Some(s) = s {
            write_field(grid, &s.q, dir.join(format!("{name}_q_{step:06}.csv")))?;
            write_field(grid, &s.v, dir.join(format!("{name}_v_{step:06}.csv")))?;
        }
    }
    Ok(())
}

/// Builds, runs and writes one scenario into `out`.
pub fn run_scenario(cfg: &ScenarioConfig, out: &Path) -> Result<RunResult, CliError> {
    let scenario = Scenario::build(cfg)?;
    create_dir(out)?;
    let every = cfg.output.every.max(1);
    let snap_dir = out.join(SNAPSHOT_DIR);
    if cfg.output.snapshots {
        create_dir(&snap_dir)?;
    }
    let grid = scenario.system.grid().clone();
    let steps = scenario.steps;
    let result = scenario.run_with(|n, state| {
        if cfg.output.snapshots && (n % every == 0 || n == steps) {
            write_snapshot(&grid, &snap_dir, n, state)?;
        }
        Ok(())
    })?;
    write_diagnostics(&result, every, &out.join(DIAGNOSTICS_FILE))?;
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, manifest(&scenario, &result)).map_err(|source| CliError::Write { path, source })?;
    Ok(result)
}
