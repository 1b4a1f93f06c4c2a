//! Refinement studies with least-squares order fits.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use fieldflow::Real;

use crate::config::{ScenarioConfig, StudyAxis};
use crate::error::CliError;
use crate::scenario::{Scenario, Summary};

/// Residuals at or below this size are treated as exact and not fitted.
pub const EXACT_FLOOR: Real = 1e-13;
/// Allowed shortfall of a fitted slope below its target.
pub const SLOPE_MARGIN: Real = 0.3;

pub const STUDY_FILE: &str = "convergence.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Diagnostic {
    Balance,
    LocalBalance,
    Charge,
    BianchiRate,
    Bianchi,
    Divergence,
    EnergyDrift,
    BoundaryResidual,
}

impl Diagnostic {
    pub const ALL: [Diagnostic; 8] = [
        Diagnostic::Balance,
        Diagnostic::LocalBalance,
        Diagnostic::Charge,
        Diagnostic::BianchiRate,
        Diagnostic::Bianchi,
        Diagnostic::Divergence,
        Diagnostic::EnergyDrift,
        Diagnostic::BoundaryResidual,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Diagnostic::Balance => "balance",
            Diagnostic::LocalBalance => "local_balance",
            Diagnostic::Charge => "charge",
            Diagnostic::BianchiRate => "bianchi_rate",
            Diagnostic::Bianchi => "bianchi",
            Diagnostic::Divergence => "divergence",
            Diagnostic::EnergyDrift => "energy_drift",
            Diagnostic::BoundaryResidual => "boundary_residual",
        }
    }

    /// Declared order of convergence.
    pub fn target(self) -> Real {
        match self {
            Diagnostic::Bianchi => 1.0,
            _ => 2.0,
        }
    }

    pub fn measure(self, s: &Summary) -> Real {
        match self {
            Diagnostic::Balance => s.balance,
            Diagnostic::LocalBalance => s.local_balance,
            Diagnostic::Charge => s.charge,
            Diagnostic::BianchiRate => s.bianchi_rate,
            Diagnostic::Bianchi => s.bianchi,
            Diagnostic::Divergence => s.divergence,
            Diagnostic::EnergyDrift => s.energy_drift(),
            Diagnostic::BoundaryResidual => s.boundary_residual,
        }
    }

    fn applies(self, cfg: &ScenarioConfig) -> bool {
        let gauge = cfg.scenario.has_gauge();
        match self {
            Diagnostic::Charge | Diagnostic::BianchiRate => gauge,
            Diagnostic::Bianchi => gauge && cfg.dim() >= 3,
            _ => true,
        }
    }
}

impl FromStr for Diagnostic {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Diagnostic::ALL
            .into_iter()
            .find(|d| d.name() == s)
            .ok_or_else(|| CliError::config(format!("unknown study diagnostic `{s}`")))
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

fn is_isolated(cfg: &ScenarioConfig) -> bool {
    let f = &cfg.forces;
    f.matter.is_empty() && f.gauge.is_empty() && f.boundary.is_empty()
}

/// Diagnostics fitted when the configuration does not name any.
pub fn default_diagnostics(cfg: &ScenarioConfig, axis: StudyAxis) -> Vec<Diagnostic> {
    let wanted: &[Diagnostic] = match axis {
        StudyAxis::H => &[
            Diagnostic::Balance,
            Diagnostic::LocalBalance,
            Diagnostic::Charge,
            Diagnostic::BianchiRate,
            Diagnostic::Bianchi,
            Diagnostic::Divergence,
            Diagnostic::EnergyDrift,
        ],
        StudyAxis::Dt => &[Diagnostic::Balance, Diagnostic::EnergyDrift],
    };
    wanted
        .iter()
        .copied()
        .filter(|d| d.applies(cfg))
        .filter(|d| *d != Diagnostic::EnergyDrift || is_isolated(cfg))
        .collect()
}

/// Least-squares slope of `log y` against `log x`.
pub fn fit_slope(xs: &[Real], ys: &[Real]) -> Real {
    let n = xs.len() as Real;
    let lx: Vec<Real> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<Real> = ys.iter().map(|y| y.ln()).collect();
    let mx = lx.iter().sum::<Real>() / n;
    let my = ly.iter().sum::<Real>() / n;
    let sxy: Real = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: Real = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyLine {
    pub diagnostic: Diagnostic,
    pub values: Vec<Real>,
    /// `None` when every value sits at the exact floor.
    pub slope: Option<Real>,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudyReport {
    pub axis: StudyAxis,
    pub levels: Vec<usize>,
    /// Grid spacing or time step of each level, whichever is refined.
    pub spacing: Vec<Real>,
    pub dt: Vec<Real>,
    pub lines: Vec<StudyLine>,
}

impl StudyReport {
    pub fn failures(&self) -> Vec<String> {
        self.lines
            .iter()
            .filter(|l| !l.passed)
            .map(|l| match l.slope {
                Some(s) => format!("{} (slope {s:.3}, target {})", l.diagnostic, l.diagnostic.target()),
                None => l.diagnostic.to_string(),
            })
            .collect()
    }

    /// Errors with the missed targets, if any.
    pub fn verdict(&self) -> Result<(), CliError> {
        let failed = self.failures();
        if failed.is_empty() {
            Ok(())
        } else {
            Err(CliError::ConvergenceMissed(failed))
        }
    }

    pub fn slope(&self, d: Diagnostic) -> Option<Real> {
        self.lines.iter().find(|l| l.diagnostic == d).and_then(|l| l.slope)
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec!["diagnostic".to_string(), "target".into(), "slope".into(), "passed".into()];
        header.extend(self.levels.iter().map(|l| format!("level_{l}")));
        w.write_record(&header)?;
        let mut spacing = vec!["spacing".to_string(), String::new(), String::new(), String::new()];
        spacing.extend(self.spacing.iter().map(Real::to_string));
        w.write_record(&spacing)?;
        for line in &self.lines {
            let mut r = vec![
                line.diagnostic.to_string(),
                line.diagnostic.target().to_string(),
                line.slope.map(|s| s.to_string()).unwrap_or_default(),
                line.passed.to_string(),
            ];
            r.extend(line.values.iter().map(Real::to_string));
            w.write_record(&r)?;
        }
        w.flush().map_err(|source| CliError::Write { path: path.to_path_buf(), source })
    }
}

/// The configuration of one refinement level.
pub fn level_config(base: &ScenarioConfig, base_scenario: &Scenario, axis: StudyAxis, level: usize) -> ScenarioConfig {
    let mut cfg = base.clone();
    let t_end = base_scenario.dt * base_scenario.steps as Real;
    cfg.study = None;
    cfg.output.snapshots = false;
    match axis {
        StudyAxis::H => {
            let h0 = base_scenario.system.grid().min_spacing();
            let ratio = base.time.dt_over_h.unwrap_or(base_scenario.dt / h0);
            let first = base.grid.axes[0].cells.max(1) as Real;
            for a in &mut cfg.grid.axes {
                a.cells = ((a.cells as Real * level as Real / first).round() as usize).max(1);
            }
            cfg.time.dt = None;
            cfg.time.steps = None;
            cfg.time.dt_over_h = Some(ratio);
            cfg.time.t_end = Some(t_end);
        }
        StudyAxis::Dt => {
            cfg.time.dt = None;
            cfg.time.dt_over_h = None;
            cfg.time.steps = Some(level);
            cfg.time.t_end = Some(t_end);
        }
    }
    cfg
}

/// Runs the configuration at each level and fits an order per diagnostic.
pub fn convergence_study(
    cfg: &ScenarioConfig,
    axis: StudyAxis,
    levels: &[usize],
    diagnostics: Option<&[Diagnostic]>,
) -> Result<StudyReport, CliError> {
    if levels.len() < 3 {
        return Err(CliError::config(format!("a study needs at least 3 levels, got {}", levels.len())));
    }
    if levels.contains(&0) {
        return Err(CliError::config("study levels must be positive"));
    }
    let base = Scenario::build(cfg)?;
    if base.steps == 0 {
        return Err(CliError::config("a study needs a positive number of steps"));
    }
    let diagnostics = match diagnostics {
        Some(d) => d.to_vec(),
        None => match cfg.study.as_ref().and_then(|s| s.diagnostics.as_ref()) {
            Some(names) => names.iter().map(|n| n.parse()).collect::<Result<Vec<_>, _>>()?,
            None => default_diagnostics(cfg, axis),
        },
    };
    let mut summaries = Vec::with_capacity(levels.len());
    let mut spacing = Vec::with_capacity(levels.len());
    let mut dts = Vec::with_capacity(levels.len());
    for &level in levels {
        let scenario = Scenario::build(&level_config(cfg, &base, axis, level))?;
        spacing.push(match axis {
            StudyAxis::H => scenario.system.grid().min_spacing(),
            StudyAxis::Dt => scenario.dt,
        });
        dts.push(scenario.dt);
        summaries.push(scenario.run()?.summary);
    }
    let lines = diagnostics
        .into_iter()
        .map(|d| {
            let values: Vec<Real> = summaries.iter().map(|s| d.measure(s)).collect();
            if values.iter().all(|v| v.abs() <= EXACT_FLOOR) {
                return StudyLine { diagnostic: d, values, slope: None, passed: true };
            }
            let ys: Vec<Real> = values.iter().map(|v| v.abs().max(EXACT_FLOOR)).collect();
            let slope = fit_slope(&spacing, &ys);
            let passed = slope.is_finite() && slope >= d.target() - SLOPE_MARGIN;
            StudyLine { diagnostic: d, values, slope: Some(slope), passed }
        })
        .collect();
    Ok(StudyReport { axis, levels: levels.to_vec(), spacing, dt: dts, lines })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slope_of_a_power_law() {
        let xs = [0.1, 0.05, 0.025];
        let ys: Vec<Real> = xs.iter().map(|x: &Real| 3.0 * x.powi(2)).collect();
        assert!((fit_slope(&xs, &ys) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn names_round_trip() {
        for d in Diagnostic::ALL {
            assert_eq!(d.name().parse::<Diagnostic>().unwrap(), d);
        }
        assert!("nope".parse::<Diagnostic>().is_err());
    }
}
