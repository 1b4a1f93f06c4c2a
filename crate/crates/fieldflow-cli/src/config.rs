//! TOML scenario configuration.
//!
//! Expression lists are flattened slot-major: for a `k`-form with fiber `n`
//! the entry for basis slot `s` and component `a` sits at `s * n + a`, with
//! slots in lexicographic order of their axes. Missing entries default to `0`.

use std::path::Path;

use fieldflow::Real;
use serde::{Deserialize, Serialize};

use crate::error::CliError;
use crate::expr::Expr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    KleinGordon,
    Higgs,
    Maxwell,
    Su2YangMills,
    Ymh,
}

impl ScenarioKind {
    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::KleinGordon => "klein_gordon",
            ScenarioKind::Higgs => "higgs",
            ScenarioKind::Maxwell => "maxwell",
            ScenarioKind::Su2YangMills => "su2_yang_mills",
            ScenarioKind::Ymh => "ymh",
        }
    }

    pub fn has_matter(self) -> bool {
        matches!(self, ScenarioKind::KleinGordon | ScenarioKind::Higgs | ScenarioKind::Ymh)
    }

    pub fn has_gauge(self) -> bool {
        matches!(self, ScenarioKind::Maxwell | ScenarioKind::Su2YangMills | ScenarioKind::Ymh)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepresentationChoice {
    #[default]
    Star,
    Dagger,
    Both,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeChoice {
    #[default]
    Leapfrog,
    Rk4,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StudyAxis {
    H,
    Dt,
}

impl std::str::FromStr for StudyAxis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "h" => Ok(StudyAxis::H),
            "dt" => Ok(StudyAxis::Dt),
            other => Err(format!("axis must be `h` or `dt`, got `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub representation: RepresentationChoice,
    #[serde(default)]
    pub seed: u64,
    pub grid: GridConfig,
    #[serde(default)]
    pub density: DensityConfig,
    #[serde(default)]
    pub initial: InitialConfig,
    #[serde(default)]
    pub forces: ForcesConfig,
    pub time: TimeConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub study: Option<StudyConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest: Option<toml::Table>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub axes: Vec<AxisConfig>,
    /// Row-major metric components as expressions of the coordinates.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric: Option<Vec<String>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AxisConfig {
    pub cells: usize,
    #[serde(default = "one")]
    pub length: Real,
    #[serde(default = "yes")]
    pub periodic: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityConfig {
    #[serde(default = "one")]
    pub mass: Real,
    #[serde(default = "half")]
    pub lambda: Real,
    #[serde(default = "one")]
    pub mu: Real,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fiber: Option<usize>,
    /// Row-major fiber metric; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa: Option<Vec<Real>>,
    /// Gauge group of the `ymh` scenario: `su2` (adjoint Higgs) or `u1`.
    #[serde(default = "su2")]
    pub algebra: String,
    #[serde(default = "one")]
    pub charge: Real,
}

impl Default for DensityConfig {
    fn default() -> Self {
        Self { mass: 1.0, lambda: 0.5, mu: 1.0, fiber: None, kappa: None, algebra: su2(), charge: 1.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    #[serde(default)]
    pub phi: Vec<String>,
    #[serde(default)]
    pub nu: Vec<String>,
    #[serde(default)]
    pub a: Vec<String>,
    #[serde(default)]
    pub eps: Vec<String>,
    /// Amplitude of a seeded random perturbation added to `phi` and `a`.
    #[serde(default)]
    pub noise: Real,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcesConfig {
    /// Interior matter current, one entry per fiber component.
    #[serde(default)]
    pub matter: Vec<String>,
    /// Interior gauge current `J`, slot-major over (axis, algebra component).
    #[serde(default)]
    pub gauge: Vec<String>,
    #[serde(default)]
    pub boundary: Vec<BoundaryForceConfig>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SectorChoice {
    Matter,
    Gauge,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundaryForceConfig {
    pub sector: SectorChoice,
    /// Face label such as `x1_upper`.
    pub face: String,
    /// Slot-major over face-chart slots and fiber components.
    pub values: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<Real>,
    /// Step as a multiple of the smallest grid spacing.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt_over_h: Option<Real>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steps: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_end: Option<Real>,
    #[serde(default)]
    pub scheme: SchemeChoice,
    #[serde(default = "one")]
    pub cfl: Real,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "one_usize")]
    pub every: usize,
    #[serde(default)]
    pub snapshots: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { every: 1, snapshots: false }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StudyConfig {
    pub axis: StudyAxis,
    pub levels: Vec<usize>,
    /// Diagnostics to fit; the default depends on the axis.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<Vec<String>>,
}

fn one() -> Real {
    1.0
}

fn half() -> Real {
    0.5
}

fn yes() -> bool {
    true
}

fn one_usize() -> usize {
    1
}

fn su2() -> String {
    "su2".to_string()
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        let cfg: ScenarioConfig = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Read { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is always serializable")
    }

    pub fn dim(&self) -> usize {
        self.grid.axes.len()
    }

    /// Structural checks that do not need the grid to be built.
    pub fn validate(&self) -> Result<(), CliError> {
        let m = self.dim();
        if !(1..=3).contains(&m) {
            return Err(CliError::config(format!("grid must have 1 to 3 axes, got {m}")));
        }
        if self.scenario.has_gauge() && m < 2 {
            return Err(CliError::config(format!("{} needs at least two axes", self.scenario.name())));
        }
        if let Some(g) = &self.grid.metric {
            if g.len() != m * m {
                return Err(CliError::config(format!("metric needs {} entries, got {}", m * m, g.len())));
            }
        }
        let t = &self.time;
        let explicit = usize::from(t.dt.is_some()) + usize::from(t.dt_over_h.is_some());
        let both = t.steps.is_some() && t.t_end.is_some();
        if explicit > 1 {
            return Err(CliError::config("time.dt and time.dt_over_h are mutually exclusive"));
        }
        if explicit == 0 && !both {
            return Err(CliError::config("no time step: give time.dt, time.dt_over_h, or both time.steps and time.t_end"));
        }
        if explicit == 1 && both {
            return Err(CliError::config("time step is overdetermined by time.steps and time.t_end"));
        }
        if t.steps.is_none() && t.t_end.is_none() {
            return Err(CliError::config("give time.steps or time.t_end"));
        }
        if self.output.every == 0 {
            return Err(CliError::config("output.every must be positive"));
        }
        if !matches!(self.density.algebra.as_str(), "su2" | "u1") {
            return Err(CliError::config(format!("unknown algebra `{}`", self.density.algebra)));
        }
        for bf in &self.forces.boundary {
            let face = fieldflow::grid::Face::parse(&bf.face)
                .ok_or_else(|| CliError::config(format!("bad face label `{}`", bf.face)))?;
            if face.axis >= m {
                return Err(CliError::config(format!("face {} does not exist in {m} dimensions", bf.face)));
            }
            if self.grid.axes[face.axis].periodic {
                return Err(CliError::config(format!("face {} lies on a periodic axis", bf.face)));
            }
            let active = match bf.sector {
                SectorChoice::Matter => self.scenario.has_matter(),
                SectorChoice::Gauge => self.scenario.has_gauge(),
            };
            if !active {
                return Err(CliError::config(format!("boundary current on inactive sector for {}", bf.face)));
            }
        }
        for list in [&self.initial.phi, &self.initial.nu, &self.initial.a, &self.initial.eps, &self.forces.matter, &self.forces.gauge] {
            for e in list {
                Expr::parse(e)?;
            }
        }
        for bf in &self.forces.boundary {
            for e in &bf.values {
                Expr::parse(e)?;
            }
        }
        Ok(())
    }
}
