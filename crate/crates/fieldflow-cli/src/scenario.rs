//! Building systems from configurations and running them.

use std::sync::Arc;

use fieldflow::connection::{cov_divergence, cov_ext_deriv, LieAlgebra, LieRepresentation};
use fieldflow::dynamics::{
    energy_balance, CurrentFn, ForceModel, GaugeSector, MatterSector, PontryaginState, Sample, Scheme, SectorForces,
    System,
};
use fieldflow::exterior::{contract_point, phi_iso, pullback_on_nodes, wedge_pair, Basis, FormField, Representation};
use fieldflow::grid::{AxisSpec, Face, FiberMetric, MetricField, RectGrid};
use fieldflow::lagrangian::{derivative_field, matter_density, FieldArgs, Potential, Slot};
use fieldflow::Real;
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{RepresentationChoice, ScenarioConfig, ScenarioKind, SchemeChoice, SectorChoice};
use crate::error::CliError;
use crate::expr::Expr;

/// Largest tolerated state difference between star and dagger runs.
pub const REP_TOLERANCE: Real = 1e-10;

/// A fully built run: system, initial state and time grid.
#[derive(Clone, Debug)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub system: System,
    pub initial: PontryaginState,
    pub dt: Real,
    pub steps: usize,
    pub scheme: Scheme,
    /// Dagger-assembled copy and its initial state when both
    /// representations are requested.
    pub twin: Option<(System, PontryaginState)>,
}

fn parse_list(list: &[String], len: usize, what: &str) -> Result<Vec<Expr>, CliError> {
    if list.len() > len {
        return Err(CliError::config(format!("{what} takes at most {len} expressions, got {}", list.len())));
    }
    let mut out = list.iter().map(|s| Expr::parse(s)).collect::<Result<Vec<_>, _>>()?;
    out.resize(len, Expr::constant(0.0));
    Ok(out)
}

fn current(exprs: Vec<Expr>) -> Option<CurrentFn> {
    if exprs.iter().all(|e| *e == Expr::constant(0.0)) {
        return None;
    }
    Some(Arc::new(move |x, t, out| {
        for (o, e) in out.iter_mut().zip(&exprs) {
            *o = e.eval(x, t);
        }
    }))
}

fn field(grid: &RectGrid, k: usize, n: usize, exprs: &[Expr]) -> FormField {
    let basis = Basis::new(grid.dim(), k);
    FormField::from_fn(grid, k, n, |x, s, a| exprs[basis.slot(s) * n + a].eval(x, 0.0))
}

fn build_grid(cfg: &ScenarioConfig) -> Result<RectGrid, CliError> {
    let axes = cfg
        .grid
        .axes
        .iter()
        .map(|a| if a.periodic { AxisSpec::periodic(a.cells, a.length) } else { AxisSpec::bounded(a.cells + 1, a.length) })
        .collect();
    RectGrid::new(axes).map_err(|e| CliError::config(e.to_string()))
}

fn build_metric(cfg: &ScenarioConfig, grid: &RectGrid) -> Result<MetricField, CliError> {
    let Some(entries) = &cfg.grid.metric else {
        return Ok(MetricField::flat(grid));
    };
    let m = grid.dim();
    let exprs = entries.iter().map(|s| Expr::parse(s)).collect::<Result<Vec<_>, _>>()?;
    for i in 0..m {
        for j in 0..i {
            if exprs[i * m + j] != exprs[j * m + i] {
                return Err(CliError::config(format!("metric entries ({i},{j}) and ({j},{i}) differ")));
            }
        }
    }
    MetricField::from_fn(grid, |x| {
        let mut g = Matrix3::identity();
        for i in 0..m {
            for j in 0..m {
                g[(i, j)] = exprs[i * m + j].eval(x, 0.0);
            }
        }
        g
    })
    .map_err(|e| CliError::config(e.to_string()))
}

fn fiber_metric(cfg: &ScenarioConfig, n: usize, fallback: FiberMetric) -> Result<FiberMetric, CliError> {
    match &cfg.density.kappa {
        None => Ok(fallback),
        Some(k) => FiberMetric::new(n, k.clone()).map_err(|e| CliError::config(e.to_string())),
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        Self::build(&ScenarioConfig::from_toml(text)?)
    }

    pub fn build(cfg: &ScenarioConfig) -> Result<Self, CliError> {
        cfg.validate()?;
        let grid = build_grid(cfg)?;
        let metric = build_metric(cfg, &grid)?;
        let m = grid.dim();
        let rep = match cfg.representation {
            RepresentationChoice::Dagger => Representation::Dagger,
            _ => Representation::Star,
        };
        let mut system = System::new(grid.clone(), metric, rep)?.with_cfl(cfg.time.cfl);
        let d = &cfg.density;

        let algebra = match cfg.scenario {
            ScenarioKind::Maxwell => Some(LieAlgebra::u1()),
            ScenarioKind::Su2YangMills => Some(LieAlgebra::su2()),
            ScenarioKind::Ymh if d.algebra == "u1" => Some(LieAlgebra::u1()),
            ScenarioKind::Ymh => Some(LieAlgebra::su2()),
            _ => None,
        };
        if let Some(alg) = &algebra {
            system = system.with_gauge(GaugeSector::yang_mills(m, alg.clone())?)?;
        }
        let matter_fiber = match cfg.scenario {
            ScenarioKind::KleinGordon => Some(d.fiber.unwrap_or(1)),
            ScenarioKind::Higgs => Some(d.fiber.unwrap_or(2)),
            ScenarioKind::Ymh => Some(if d.algebra == "u1" { 2 } else { 3 }),
            _ => None,
        };
        if let Some(n) = matter_fiber {
            if cfg.scenario == ScenarioKind::Ymh && d.fiber.is_some_and(|f| f != n) {
                return Err(CliError::config(format!("the {} Higgs field has {n} components", d.algebra)));
            }
            let potential = match cfg.scenario {
                ScenarioKind::KleinGordon => Potential::KleinGordon { mass: d.mass },
                _ => Potential::Higgs { lambda: d.lambda, mu: d.mu },
            };
            let coupling = match (cfg.scenario, &algebra) {
                (ScenarioKind::Ymh, Some(alg)) if alg.dim() == 1 => Some(LieRepresentation::u1_charged(d.charge)),
                (ScenarioKind::Ymh, Some(alg)) => Some(LieRepresentation::adjoint(alg)),
                _ => None,
            };
            let fallback = coupling.as_ref().map_or_else(|| FiberMetric::identity(n), |c| c.kappa().clone());
            let kappa = fiber_metric(cfg, n, fallback)?;
            let density = matter_density(m, kappa, potential).map_err(fieldflow::dynamics::DynamicsError::from)?;
            let mut sector = MatterSector::quadratic(density);
            if let Some(c) = coupling {
                sector = sector.with_coupling(c);
            }
            system = system.with_matter(sector)?;
        }

        let alg_dim = algebra.as_ref().map_or(0, LieAlgebra::dim);
        let mut forces = ForceModel::default();
        if let Some(n) = matter_fiber {
            forces.matter.interior = current(parse_list(&cfg.forces.matter, n, "forces.matter")?);
        } else if !cfg.forces.matter.is_empty() {
            return Err(CliError::config("forces.matter given without a matter sector"));
        }
        if algebra.is_some() {
            forces.gauge.interior = current(parse_list(&cfg.forces.gauge, m * alg_dim, "forces.gauge")?);
        } else if !cfg.forces.gauge.is_empty() {
            return Err(CliError::config("forces.gauge given without a gauge sector"));
        }
        for bf in &cfg.forces.boundary {
            let face = Face::parse(&bf.face).ok_or_else(|| CliError::config(format!("bad face `{}`", bf.face)))?;
            let (target, len): (&mut SectorForces, usize) = match bf.sector {
                SectorChoice::Matter => (&mut forces.matter, matter_fiber.unwrap_or(0)),
                SectorChoice::Gauge => (&mut forces.gauge, (m - 1) * alg_dim),
            };
            if target.boundary.iter().any(|(f, _)| *f == face) {
                return Err(CliError::config(format!("two currents on {}", bf.face)));
            }
            let exprs = parse_list(&bf.values, len, &format!("boundary current on {}", bf.face))?;
            let f: CurrentFn = Arc::new(move |x, t, out| {
                for (o, e) in out.iter_mut().zip(&exprs) {
                    *o = e.eval(x, t);
                }
            });
            target.boundary.push((face, f));
        }
        system = system.with_forces(forces)?;

        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let noise = cfg.initial.noise;
        let mut perturb = |f: &mut FormField| {
            if noise != 0.0 {
                for v in f.data_mut() {
                    *v += noise * rng.random_range(-1.0..1.0);
                }
            }
        };
        let matter = match matter_fiber {
            Some(n) => {
                let mut phi = field(&grid, 0, n, &parse_list(&cfg.initial.phi, n, "initial.phi")?);
                perturb(&mut phi);
                let nu = field(&grid, 0, n, &parse_list(&cfg.initial.nu, n, "initial.nu")?);
                Some((phi, nu))
            }
            None => None,
        };
        let gauge = match algebra {
            Some(_) => {
                let mut a = field(&grid, 1, alg_dim, &parse_list(&cfg.initial.a, m * alg_dim, "initial.a")?);
                perturb(&mut a);
                let eps = field(&grid, 1, alg_dim, &parse_list(&cfg.initial.eps, m * alg_dim, "initial.eps")?);
                Some((a, eps))
            }
            None => None,
        };
        let twin = match cfg.representation {
            RepresentationChoice::Both => {
                let dagger = system.clone().with_representation(Representation::Dagger);
                let state = dagger.initial_state(0.0, matter.clone(), gauge.clone())?;
                Some((dagger, state))
            }
            _ => None,
        };
        let initial = system.initial_state(0.0, matter, gauge)?;
        let (dt, steps) = resolve_time(cfg, &grid)?;
        Ok(Self {
            config: cfg.clone(),
            system,
            initial,
            dt,
            steps,
            scheme: match cfg.time.scheme {
                SchemeChoice::Leapfrog => Scheme::Leapfrog,
                SchemeChoice::Rk4 => Scheme::Rk4,
            },
            twin,
        })
    }
}

fn resolve_time(cfg: &ScenarioConfig, grid: &RectGrid) -> Result<(Real, usize), CliError> {
    let t = &cfg.time;
    let h = grid.min_spacing();
    let explicit = t.dt.or(t.dt_over_h.map(|r| r * h));
    let (dt, steps) = match (explicit, t.steps, t.t_end) {
        (Some(dt), Some(steps), None) => (dt, steps),
        (Some(dt), None, Some(end)) => {
            let steps = (end / dt - 1e-9).ceil().max(1.0) as usize;
            (end / steps as Real, steps)
        }
        (None, Some(steps), Some(end)) => (end / steps.max(1) as Real, steps),
        _ => return Err(CliError::config("cannot resolve the time step from the time block")),
    };
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(CliError::config(format!("time step must be positive, got {dt}")));
    }
    Ok((dt, steps))
}

/// One diagnostics row.
#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub t: Real,
    pub energy: Real,
    pub energy_matter: Real,
    pub energy_gauge: Real,
    pub power_interior: Real,
    pub power_boundary: Vec<Real>,
    pub power_interaction_gauge: Real,
    pub power_interaction_matter: Real,
    pub balance_residual: Option<Real>,
    pub local_balance_residual: Option<Real>,
    pub boundary_residual: Real,
    pub charge: Vec<Real>,
    pub charge_residual: Option<Real>,
    pub bianchi_residual: Option<Real>,
    pub bianchi_rate_residual: Option<Real>,
    pub rep_difference: Option<Real>,
}

/// Maxima of the diagnostics over a run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Summary {
    pub energy_initial: Real,
    pub energy_final: Real,
    pub balance: Real,
    pub local_balance: Real,
    pub charge: Real,
    pub bianchi: Real,
    pub bianchi_rate: Real,
    pub initial_boundary_residual: Real,
    pub boundary_residual: Real,
    pub interaction_ratio: Real,
    pub rep_difference: Real,
    pub divergence: Real,
}

impl Summary {
    /// `|E(T) - E(0)| / |E(0)|`.
    pub fn energy_drift(&self) -> Real {
        (self.energy_final - self.energy_initial).abs() / self.energy_initial.abs()
    }
}

#[derive(Clone, Debug)]
pub struct RunResult {
    pub faces: Vec<Face>,
    pub charge_components: usize,
    pub rows: Vec<Row>,
    pub summary: Summary,
    pub final_state: PontryaginState,
}

impl RunResult {
    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = ["t", "energy", "energy_matter", "energy_gauge", "power_interior"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(self.faces.iter().map(|f| format!("power_boundary_{}", f.label())));
        h.extend(["power_interaction_gauge", "power_interaction_matter", "balance_residual", "local_balance_residual", "boundary_residual"].map(String::from));
        h.extend((0..self.charge_components).map(|a| format!("charge_{}", a + 1)));
        h.extend(["charge_residual", "bianchi_residual", "bianchi_rate_residual", "rep_difference"].map(String::from));
        h
    }
}

fn row_from(sample: &Sample, system: &System, state: &PontryaginState) -> Result<Row, CliError> {
    let gauge = system.gauge().is_some();
    Ok(Row {
        t: sample.t,
        energy: sample.energy(),
        energy_matter: sample.energy_matter,
        energy_gauge: sample.energy_gauge,
        power_interior: sample.power_matter + sample.power_gauge,
        power_boundary: sample.power_boundary.clone(),
        power_interaction_gauge: sample.interaction_gauge,
        power_interaction_matter: sample.interaction_matter,
        balance_residual: None,
        local_balance_residual: None,
        boundary_residual: sample.boundary_residual,
        charge: sample.charge.clone(),
        charge_residual: None,
        bianchi_residual: if gauge && system.grid().dim() >= 3 { Some(system.bianchi_residual(state)?) } else { None },
        bianchi_rate_residual: None,
        rep_difference: None,
    })
}

/// Left-hand minus right-hand side of the covariant divergence theorem for
/// `chi = d_zeta L` and the configuration of every sector.
pub fn divergence_residual(system: &System, state: &PontryaginState) -> Result<Real, CliError> {
    let grid = system.grid();
    let mut total = 0.0;
    let sectors = [
        (state.matter.as_ref(), system.matter().map(|m| m.density.as_ref())),
        (state.gauge.as_ref(), system.gauge().map(|g| &g.density as &dyn fieldflow::lagrangian::Density)),
    ];
    for (i, (s, d)) in sectors.into_iter().enumerate() {
        let (Some(s), Some(d)) = (s, d) else { continue };
        let (zeta, conn) = if i == 0 {
            (system.matter_zeta(state)?, system.matter_connection(state)?.map(|c| c.into_owned()))
        } else {
            (system.curvature(state)?, Some(system.gauge_connection(state)?))
        };
        let args = FieldArgs { metric: system.metric(), phi: &s.q, nu: &s.v, zeta: &zeta };
        let chi = derivative_field(d, Slot::Zeta, Representation::Star, &args);
        let k = d.degree();
        let dphi = cov_ext_deriv(grid, conn.as_ref(), &s.q).map_err(fieldflow::dynamics::DynamicsError::from)?;
        let div = cov_divergence(grid, conn.as_ref(), &chi).map_err(fieldflow::dynamics::DynamicsError::from)?;
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        let interior: Real = (0..grid.len())
            .map(|p| grid.weight(p) * (contract_point(chi.at(p), dphi.at(p)) + sign * contract_point(div.at(p), s.q.at(p))))
            .sum();
        let eta = phi_iso(&chi);
        let mut boundary = 0.0;
        for bd in system.boundaries() {
            let a = pullback_on_nodes(&s.q, bd.face, &bd.nodes);
            let b = pullback_on_nodes(&eta, bd.face, &bd.nodes);
            boundary += wedge_pair(&a, &b).map_err(fieldflow::dynamics::DynamicsError::from)?.integrate_face(bd);
        }
        total += (interior - boundary).abs();
    }
    Ok(total)
}

impl Scenario {
    /// Runs all steps, calling `observe` with each accepted state.
    pub fn run_with<F>(&self, mut observe: F) -> Result<RunResult, CliError>
    where
        F: FnMut(usize, &PontryaginState) -> Result<(), CliError>,
    {
        let sys = &self.system;
        let gauge = sys.gauge().is_some();
        let mut window: Vec<(PontryaginState, Sample)> = Vec::with_capacity(3);
        let mut twin_state = self.twin.as_ref().map(|(_, s)| s.clone());
        let first = sys.sample(&self.initial)?;
        let mut rows = vec![row_from(&first, sys, &self.initial)?];
        let mut summary = Summary {
            energy_initial: first.energy(),
            initial_boundary_residual: first.boundary_residual,
            divergence: divergence_residual(sys, &self.initial)?,
            ..Summary::default()
        };
        let scale = |s: &Sample| s.energy().abs().max(Real::MIN_POSITIVE);
        summary.interaction_ratio = (first.interaction_gauge + first.interaction_matter).abs() / scale(&first);
        if gauge && sys.grid().dim() >= 3 {
            summary.bianchi = rows[0].bianchi_residual.unwrap_or(0.0);
        }
        observe(0, &self.initial)?;
        window.push((self.initial.clone(), first));
        for n in 1..=self.steps {
            let prev = &window.last().expect("window holds the current state").0;
            let next = sys.step(prev, self.dt, self.scheme)?;
            let sample = sys.sample(&next)?;
            let mut row = row_from(&sample, sys, &next)?;
            if let (Some((twin, _)), Some(ts)) = (&self.twin, twin_state.as_mut()) {
                *ts = twin.step(ts, self.dt, self.scheme)?;
                let diff = ts.max_difference(&next);
                if diff > REP_TOLERANCE {
                    return Err(CliError::RepresentationMismatch { difference: diff, t: next.t });
                }
                row.rep_difference = Some(diff);
                summary.rep_difference = summary.rep_difference.max(diff);
            }
            summary.boundary_residual = summary.boundary_residual.max(sample.boundary_residual);
            summary.interaction_ratio = summary
                .interaction_ratio
                .max((sample.interaction_gauge + sample.interaction_matter).abs() / scale(&sample));
            if let Some(b) = row.bianchi_residual {
                summary.bianchi = summary.bianchi.max(b);
            }
            observe(n, &next)?;
            if window.len() == 3 {
                window.remove(0);
            }
            window.push((next, sample));
            if window.len() == 3 {
                let (s0, s1, s2) = (&window[0].0, &window[1].0, &window[2].0);
                let samples = [window[0].1.clone(), window[1].1.clone(), window[2].1.clone()];
                let balance = energy_balance(&samples)?.residual[0];
                let local = sys.local_balance_norm(s0, s1, s2)?;
                let mid = &mut rows[n - 1];
                mid.balance_residual = Some(balance);
                mid.local_balance_residual = Some(local);
                summary.balance = summary.balance.max(balance.abs());
                summary.local_balance = summary.local_balance.max(local);
                if gauge {
                    let c = sys.charge_residual(s0, s1, s2)?;
                    let b = sys.bianchi_rate_residual(s0, s1, s2)?;
                    mid.charge_residual = Some(c);
                    mid.bianchi_rate_residual = Some(b);
                    summary.charge = summary.charge.max(c);
                    summary.bianchi_rate = summary.bianchi_rate.max(b);
                }
            }
            rows.push(row);
        }
        let last = window.pop().expect("at least the initial state");
        summary.energy_final = last.1.energy();
        Ok(RunResult {
            faces: sys.boundaries().iter().map(|b| b.face).collect(),
            charge_components: sys.gauge().map_or(0, |g| g.algebra.dim()),
            rows,
            summary,
            final_state: last.0,
        })
    }

    pub fn run(&self) -> Result<RunResult, CliError> {
        self.run_with(|_, _| Ok(()))
    }
}
