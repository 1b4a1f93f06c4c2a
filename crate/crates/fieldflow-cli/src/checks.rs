//! The invariant suite behind `--check`.
//!
//! Each check measures one property of the discretization and compares it
//! with a fixed threshold. Randomized inputs are drawn from a generator
//! seeded by the caller, so a run is reproducible.

use std::f64::consts::PI;
use std::fmt;
use std::time::Instant;

use fieldflow::connection::{cov_divergence, cov_ext_deriv, LieAlgebra, LieRepresentation, LinearConnection};
use fieldflow::dynamics::PontryaginState;
use fieldflow::exterior::{
    contract_point, hodge_star, musical, pairing, phi_iso, phi_iso_inv, phi_point, pullback_on_nodes, wedge_pair,
    Basis, DualField, FormField, Musical, MusicalSlots, Representation,
};
use fieldflow::grid::{induced_boundary_data, AxisSpec, FiberMetric, MetricField, PointMetric, RectGrid};
use fieldflow::lagrangian::{
    fd_star_derivative, matter_density, slot_degree, slot_len, ym_density, Density, PointArgs, Potential, Slot,
};
use fieldflow::Real;
use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{ScenarioConfig, StudyAxis};
use crate::error::CliError;
use crate::scenario::Scenario;
use crate::study::{convergence_study, fit_slope, Diagnostic};

/// Outcome of one check.
#[derive(Clone, Debug, PartialEq)]
pub struct CheckOutcome {
    pub id: usize,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
    pub seconds: f64,
}

impl fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} [{:>2}] {}: {} ({:.2} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.detail,
            self.seconds
        )
    }
}

pub const NAMES: [&str; 10] = [
    "algebraic identities",
    "covariant divergence theorem",
    "fiber derivative oracle",
    "functional derivative oracle",
    "klein-gordon energy conservation",
    "boundary energy flow",
    "maxwell limit",
    "su2 yang-mills identities",
    "ymh interaction cancellation",
    "representation independence",
];

type Measured = Result<(bool, String), CliError>;

/// Runs check `id` (1 to 10).
pub fn run_check(id: usize, seed: u64) -> CheckOutcome {
    let start = Instant::now();
    let result = match id {
        1 => algebraic_identities(seed),
        2 => divergence_theorem(seed),
        3 => fiber_derivative_oracle(seed),
        4 => functional_derivative_oracle(seed),
        5 => klein_gordon_conservation(),
        6 => boundary_energy_flow(),
        7 => maxwell_limit(),
        8 => yang_mills_identities(seed),
        9 => interaction_cancellation(seed),
        10 => representation_independence(seed),
        _ => Err(CliError::config(format!("no check numbered {id}"))),
    };
    let (passed, detail) = result.unwrap_or_else(|e| (false, format!("error: {e}")));
    CheckOutcome {
        id,
        name: NAMES.get(id.wrapping_sub(1)).copied().unwrap_or("unknown"),
        passed,
        detail,
        seconds: start.elapsed().as_secs_f64(),
    }
}

pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    (1..=NAMES.len()).map(|id| run_check(id, seed)).collect()
}

fn scenario_config(text: &str) -> Result<ScenarioConfig, CliError> {
    ScenarioConfig::from_toml(text)
}

fn random_spd(rng: &mut ChaCha8Rng) -> Matrix3<Real> {
    let mut a = Matrix3::zeros();
    for v in a.iter_mut() {
        *v = rng.random_range(-0.4..0.4);
    }
    a * a.transpose() + Matrix3::identity()
}

fn random_form(rng: &mut ChaCha8Rng, grid: &RectGrid, k: usize, n: usize) -> FormField {
    let mut f = FormField::zeros_on(grid, k, n);
    for x in f.data_mut() {
        *x = rng.random_range(-1.0..1.0);
    }
    f
}

fn shapes() -> Vec<(usize, usize, usize)> {
    let mut out = Vec::new();
    for m in 1..=3 {
        for k in 0..=m {
            for n in 1..=3 {
                out.push((m, k, n));
            }
        }
    }
    out
}

fn identity_grid(m: usize) -> Result<RectGrid, CliError> {
    let axes = (0..m).map(|i| if i == 0 { AxisSpec::bounded(4, 1.0) } else { AxisSpec::periodic(3, 1.0) }).collect();
    RectGrid::new(axes).map_err(|e| CliError::config(e.to_string()))
}

fn algebraic_identities(seed: u64) -> Measured {
    const INSTANCES: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = shapes();
    let (mut phi_rt, mut hodge, mut music, mut pair) = (0.0_f64, 0.0_f64, 0.0_f64, 0.0_f64);
    for i in 0..INSTANCES {
        let (m, k, n) = shapes[i % shapes.len()];
        let grid = identity_grid(m)?;
        let g = random_spd(&mut rng);
        let metric = MetricField::from_fn(&grid, |_| g).map_err(|e| CliError::config(e.to_string()))?;
        let w = random_form(&mut rng, &grid, k, n);
        let scale = 1.0 + w.max_abs();

        phi_rt = phi_rt.max(phi_iso_inv(&phi_iso(&w)).max_abs_diff(&w) / scale);
        let eta = random_form(&mut rng, &grid, m - k, n);
        phi_rt = phi_rt.max(phi_iso(&phi_iso_inv(&eta)).max_abs_diff(&eta) / (1.0 + eta.max_abs()));

        let sign = if (k * (m - k)) % 2 == 0 { 1.0 } else { -1.0 };
        let twice = hodge_star(&hodge_star(&w, &metric), &metric);
        hodge = hodge.max(twice.max_abs_diff(&w.scaled(sign)) / scale);

        let mut kmat = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                kmat[a * n + b] = if a == b { 1.5 } else { 0.2 };
            }
        }
        let kappa = FiberMetric::new(n, kmat).map_err(|e| CliError::config(e.to_string()))?;
        for slots in [MusicalSlots::Base, MusicalSlots::Fiber, MusicalSlots::Both] {
            let there = musical(&w, Musical::Flat, slots, &metric, &kappa);
            let back = musical(&there, Musical::Sharp, slots, &metric, &kappa);
            music = music.max(back.max_abs_diff(&w) / scale);
        }

        let boundaries = grid
            .faces()
            .into_iter()
            .map(|f| induced_boundary_data(&grid, &metric, f))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::config(e.to_string()))?;
        let mut star = DualField::zeros(Representation::Star, &grid, k, n);
        star.interior = random_form(&mut rng, &grid, k, n);
        for (_, part) in &mut star.boundary {
            for x in part.data_mut() {
                *x = rng.random_range(-1.0..1.0);
            }
        }
        let a = pairing(&star, &w, &grid, &boundaries).map_err(fieldflow::dynamics::DynamicsError::from)?;
        let b = pairing(&star.to_rep(Representation::Dagger), &w, &grid, &boundaries)
            .map_err(fieldflow::dynamics::DynamicsError::from)?;
        pair = pair.max((a - b).abs() / (1.0 + a.abs()));
    }

    let mut lie = 0.0_f64;
    let algebras = [LieAlgebra::u1(), LieAlgebra::su2(), LieAlgebra::su2().abelianized()];
    for alg in &algebras {
        lie = lie.max(alg.antisymmetry_defect()).max(alg.jacobi_defect()).max(alg.invariance_defect());
        lie = lie.max(LieRepresentation::adjoint(alg).invariance_defect());
    }
    let su2 = LieAlgebra::su2();
    let d = su2.dim();
    let br = |x: &[Real], y: &[Real]| {
        let mut out = vec![0.0; d];
        su2.bracket(x, y, &mut out);
        out
    };
    let killing = |x: &[Real], y: &[Real]| {
        let mut s = 0.0;
        for a in 0..d {
            for b in 0..d {
                s += su2.killing(a, b) * x[a] * y[b];
            }
        }
        s
    };
    for _ in 0..INSTANCES {
        let mut v = || (0..d).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<Real>>();
        let (x, y, z) = (v(), v(), v());
        let xy = br(&x, &y);
        let yx = br(&y, &x);
        lie = lie.max(xy.iter().zip(&yx).map(|(p, q)| (p + q).abs()).fold(0.0, Real::max));
        let j1 = br(&x, &br(&y, &z));
        let j2 = br(&y, &br(&z, &x));
        let j3 = br(&z, &br(&x, &y));
        lie = lie.max((0..d).map(|a| (j1[a] + j2[a] + j3[a]).abs()).fold(0.0, Real::max));
        lie = lie.max((killing(&br(&x, &y), &z) + killing(&y, &br(&x, &z))).abs());
    }
    for q in [-1.0, 0.5, 2.0] {
        lie = lie.max(LieRepresentation::u1_charged(q).invariance_defect());
    }

    let worst = phi_rt.max(hodge).max(music).max(pair).max(lie);
    Ok((
        worst <= 1e-12,
        format!(
            "{INSTANCES} instances each; max defects phi {phi_rt:.1e}, star-star {hodge:.1e}, musical {music:.1e}, pairing {pair:.1e}, lie {lie:.1e} (tol 1e-12)"
        ),
    ))
}

fn divergence_residual(n: usize, k: usize, c: &[Real; 6]) -> Result<Real, CliError> {
    let grid = RectGrid::new(vec![AxisSpec::bounded(n + 1, 1.0), AxisSpec::bounded(n + 1, 1.0)])
        .map_err(|e| CliError::config(e.to_string()))?;
    let metric = MetricField::flat(&grid);
    let conn = LinearConnection::from_fn(&grid, 2, |x, i, a, b| {
        c[0] * (x[0] + 2.0 * x[1] + (i + 2 * a + 3 * b) as Real).sin()
    });
    let chi = FormField::from_fn(&grid, k + 1, 2, |x, s, a| {
        (c[1] * x[0] - c[2] * x[1] + s.bits() as Real + a as Real).cos() * (1.0 + x[0] * x[1])
    });
    let phi = FormField::from_fn(&grid, k, 2, |x, s, a| {
        (c[3] * x[0] + c[4] * x[1] * x[1] + c[5] * (s.bits() as Real + a as Real)).sin()
    });
    let err = |e: fieldflow::connection::ConnectionError| CliError::from(fieldflow::dynamics::DynamicsError::from(e));
    let dphi = cov_ext_deriv(&grid, Some(&conn), &phi).map_err(err)?;
    let div = cov_divergence(&grid, Some(&conn), &chi).map_err(err)?;
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    let interior: Real = (0..grid.len())
        .map(|p| grid.weight(p) * (contract_point(chi.at(p), dphi.at(p)) + sign * contract_point(div.at(p), phi.at(p))))
        .sum();
    let eta = phi_iso(&chi);
    let mut boundary = 0.0;
    for f in grid.faces() {
        let bd = induced_boundary_data(&grid, &metric, f).map_err(|e| CliError::config(e.to_string()))?;
        let a = pullback_on_nodes(&phi, f, &bd.nodes);
        let b = pullback_on_nodes(&eta, f, &bd.nodes);
        boundary += wedge_pair(&a, &b).map_err(fieldflow::dynamics::DynamicsError::from)?.integrate_face(&bd);
    }
    Ok((interior - boundary).abs())
}

fn divergence_theorem(seed: u64) -> Measured {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(2));
    let c: [Real; 6] = std::array::from_fn(|i| if i == 0 { rng.random_range(0.2..0.6) } else { rng.random_range(0.5..2.0) });
    let levels = [16usize, 32, 64];
    let hs: Vec<Real> = levels.iter().map(|&n| 1.0 / n as Real).collect();
    let mut worst = Real::INFINITY;
    let mut parts = Vec::new();
    for k in 0..2 {
        let rs = levels.iter().map(|&n| divergence_residual(n, k, &c)).collect::<Result<Vec<_>, _>>()?;
        let s = fit_slope(&hs, &rs);
        worst = worst.min(s);
        parts.push(format!("k={k} slope {s:.2}"));
    }
    Ok((worst >= 1.7, format!("{} over 16/32/64 (target >= 1.7)", parts.join(", "))))
}

fn builtin_densities() -> Result<Vec<(String, Box<dyn Density>)>, CliError> {
    let err = |e: fieldflow::lagrangian::LagrangianError| CliError::config(e.to_string());
    let kappa = FiberMetric::new(2, vec![2.0, 0.3, 0.3, 1.0]).map_err(|e| CliError::config(e.to_string()))?;
    let mut out: Vec<(String, Box<dyn Density>)> = Vec::new();
    for m in 1..=3 {
        out.push((
            format!("klein-gordon m={m}"),
            Box::new(matter_density(m, FiberMetric::identity(1), Potential::KleinGordon { mass: 0.7 }).map_err(err)?),
        ));
        out.push((
            format!("higgs m={m}"),
            Box::new(matter_density(m, kappa.clone(), Potential::Higgs { lambda: 0.5, mu: 0.3 }).map_err(err)?),
        ));
    }
    for m in 2..=3 {
        for (name, alg) in [("u1", LieAlgebra::u1()), ("su2", LieAlgebra::su2())] {
            out.push((format!("yang-mills {name} m={m}"), Box::new(ym_density(m, &alg).map_err(err)?)));
        }
        let rep = LieRepresentation::adjoint(&LieAlgebra::su2());
        out.push((
            format!("ymh adjoint higgs m={m}"),
            Box::new(matter_density(m, rep.kappa().clone(), Potential::Higgs { lambda: 0.25, mu: 1.0 }).map_err(err)?),
        ));
    }
    Ok(out)
}

fn fiber_derivative_oracle(seed: u64) -> Measured {
    const POINTS: usize = 100;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
    let densities = builtin_densities()?;
    let mut worst = 0.0_f64;
    let mut worst_name = String::new();
    for (name, d) in &densities {
        let m = d.dim();
        for _ in 0..POINTS {
            let pm = PointMetric::from_matrix(m, random_spd(&mut rng)).expect("random metric is positive definite");
            let mut v = |len: usize| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<Real>>();
            let phi = v(slot_len(d.as_ref(), Slot::Phi));
            let nu = v(slot_len(d.as_ref(), Slot::Nu));
            let zeta = v(slot_len(d.as_ref(), Slot::Zeta));
            let p = PointArgs { metric: &pm, phi: &phi, nu: &nu, zeta: &zeta };
            let mut pairs = Vec::new();
            for slot in [Slot::Phi, Slot::Nu, Slot::Zeta] {
                let len = slot_len(d.as_ref(), slot);
                let up = slot_degree(d.degree(), slot);
                let mut analytic = vec![0.0; len];
                let mut fd = vec![0.0; len];
                d.star_derivative(slot, &p, &mut analytic);
                fd_star_derivative(d.as_ref(), slot, &p, &mut fd);
                let mut dagger = vec![0.0; len];
                let mut fd_dagger = vec![0.0; len];
                d.dagger_derivative(slot, &p, &mut dagger);
                phi_point(&Basis::new(m, up), &Basis::new(m, m - up), d.fiber(), &fd, &mut fd_dagger);
                pairs.push((slot, analytic, fd));
                pairs.push((slot, dagger, fd_dagger));
            }
            let scale = pairs.iter().flat_map(|(_, a, _)| a.iter()).fold(Real::MIN_POSITIVE, |s, x| s.max(x.abs()));
            for (slot, analytic, fd) in &pairs {
                for (a, b) in analytic.iter().zip(fd) {
                    let rel = (a - b).abs() / scale;
                    if rel > worst {
                        worst = rel;
                        worst_name = format!("{name} {slot:?}");
                    }
                }
            }
        }
    }
    Ok((
        worst <= 1e-7,
        format!("{} densities x {POINTS} points; max relative deviation {worst:.1e} at {worst_name} (tol 1e-7)", densities.len()),
    ))
}

const CURVED_METRIC: &str = r#"metric = ["1 + 0.3*cos(2*pi*x2)^2", "0.2*sin(2*pi*x1)", "0.2*sin(2*pi*x1)", "1.2 + 0.1*sin(2*pi*x1)"]"#;

fn trajectory(scenario: &Scenario) -> Result<Vec<PontryaginState>, CliError> {
    let mut states = Vec::new();
    scenario.run_with(|_, s| {
        states.push(s.clone());
        Ok(())
    })?;
    Ok(states)
}

fn functional_derivative_oracle(seed: u64) -> Measured {
    let cases = [
        ("klein_gordon", "phi = [\"cos(2*pi*x1)*sin(2*pi*x2)\"]\nnu = [\"0.5*sin(2*pi*x1)\"]"),
        ("higgs", "phi = [\"1 + 0.3*cos(2*pi*x1)\", \"0.2*sin(2*pi*x2)\"]\nnu = [\"0.1\", \"0.4*cos(2*pi*x2)\"]"),
        ("su2_yang_mills", "a = [\"0.4*sin(2*pi*x2)\", \"0.2\", \"0.3*cos(2*pi*x1)\", \"0.1*cos(2*pi*x2)\", \"0.5*sin(2*pi*x1)\", \"-0.2\"]\neps = [\"0.1\", \"0\", \"0.2*sin(2*pi*x1)\", \"0\", \"0.3\", \"0\"]"),
        ("ymh", "phi = [\"0.5 + 0.2*cos(2*pi*x1)\", \"0.3*sin(2*pi*x2)\", \"0.1\"]\na = [\"0.4*sin(2*pi*x2)\", \"0.2\", \"0.3*cos(2*pi*x1)\", \"0.1*cos(2*pi*x2)\", \"0.5*sin(2*pi*x1)\", \"-0.2\"]"),
    ];
    let mut worst = 0.0_f64;
    let mut checked = 0;
    let mut parts = Vec::new();
    for (kind, initial) in cases {
        let text = format!(
            "scenario = \"{kind}\"\nseed = {seed}\n[grid]\naxes = [{{cells = 8}}, {{cells = 8}}]\n{CURVED_METRIC}\n[initial]\n{initial}\nnoise = 0.05\n[time]\ndt = 0.01\nsteps = 2\n"
        );
        let scenario = Scenario::build(&scenario_config(&text)?)?;
        let mut states = trajectory(&scenario)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(4));
        let mid = &mut states[1];
        for sector in [mid.matter.as_mut(), mid.gauge.as_mut()].into_iter().flatten() {
            for x in sector.q.data_mut() {
                *x += 0.05 * rng.random_range(-1.0..1.0);
            }
        }
        let check = scenario.system.action_gradient_check(&states, 1)?;
        worst = worst.max(check.relative());
        checked += check.checked;
        parts.push(format!("{kind} {:.1e}", check.relative()));
    }
    Ok((
        worst <= 1e-6,
        format!("{checked} components on 8x8 curved grids; relative deviation {} (tol 1e-6)", parts.join(", ")),
    ))
}

fn klein_gordon_config(t_end: Real) -> String {
    format!(
        "scenario = \"klein_gordon\"\n[grid]\naxes = [{{cells = 64}}]\n[density]\nmass = 0.5\n[initial]\nphi = [\"cos(2*pi*x1)\"]\n[time]\ndt_over_h = 0.25\nt_end = {t_end}\n"
    )
}

fn klein_gordon_conservation() -> Measured {
    let omega = (4.0 * PI * PI + 2.0 * 0.5_f64).sqrt();
    let t_end = 10.0 * 2.0 * PI / omega;
    let cfg = scenario_config(&klein_gordon_config(t_end))?;
    let scenario = Scenario::build(&cfg)?;
    let drift = scenario.run()?.summary.energy_drift();
    let n = scenario.steps;
    let study = convergence_study(&cfg, StudyAxis::Dt, &[n, 2 * n, 4 * n], Some(&[Diagnostic::EnergyDrift]))?;
    let slope = study.slope(Diagnostic::EnergyDrift).unwrap_or(Real::NAN);
    Ok((
        drift <= 1e-4 && (slope - 2.0).abs() <= 0.3,
        format!("drift {drift:.2e} after 10 periods at dt = h/4 (tol 1e-4); dt slope {slope:.2} (target 2 +/- 0.3)"),
    ))
}

fn rod_config() -> &'static str {
    r#"
scenario = "klein_gordon"
[grid]
axes = [{ cells = 16, periodic = false }]
[initial]
phi = ["cos(pi*x1)"]
[[forces.boundary]]
sector = "matter"
face = "x1_upper"
values = ["0.7*(1 - cos(3*t))"]
[time]
dt_over_h = 0.25
t_end = 1.0
"#
}

fn balance_slope(text: &str, levels: &[usize]) -> Result<(Real, Vec<Real>), CliError> {
    let cfg = scenario_config(text)?;
    let study = convergence_study(&cfg, StudyAxis::H, levels, Some(&[Diagnostic::Balance]))?;
    let values = study.lines[0].values.clone();
    Ok((study.slope(Diagnostic::Balance).unwrap_or(Real::INFINITY), values))
}

fn sci(values: &[Real]) -> String {
    values.iter().map(|v| format!("{v:.2e}")).collect::<Vec<_>>().join(" ")
}

fn boundary_energy_flow() -> Measured {
    let (slope, values) = balance_slope(rod_config(), &[16, 32, 64, 128])?;
    Ok((slope >= 1.7, format!("balance residual {} over 16..128 cells, slope {slope:.2} (target >= 1.7)", sci(&values))))
}

fn poynting_config(kind: &str, components: usize) -> String {
    let a1: Vec<String> = (0..components)
        .map(|c| format!("\"{}*(sin(2*pi*x1) + 0.5)*cos(pi*x2)\"", 0.3 * (c + 1) as Real))
        .collect();
    let a2 = vec!["\"0\"".to_string(); components];
    let j = vec!["\"0.5*(1 - cos(2*t))*sin(2*pi*x1)\"".to_string(); components];
    format!(
        "scenario = \"{kind}\"\n[grid]\naxes = [{{cells = 8}}, {{cells = 8, periodic = false}}]\n[initial]\na = [{}, {}]\n[[forces.boundary]]\nsector = \"gauge\"\nface = \"x2_upper\"\nvalues = [{}]\n[time]\ndt_over_h = 0.25\nt_end = 0.5\n",
        a1.join(", "),
        a2.join(", "),
        j.join(", ")
    )
}

fn maxwell_limit() -> Measured {
    let text = r#"
scenario = "maxwell"
[grid]
axes = [{ cells = 64 }, { cells = 8 }]
[initial]
a = ["0", "cos(2*pi*x1)"]
[time]
dt_over_h = 0.25
t_end = 3.0
"#;
    let scenario = Scenario::build(&scenario_config(text)?)?;
    let mut samples = Vec::new();
    scenario.run_with(|_, s| {
        let g = s.gauge.as_ref().expect("maxwell has a gauge sector");
        samples.push((s.t, g.q.at(0)[1]));
        Ok(())
    })?;
    let crossings: Vec<Real> = samples
        .windows(2)
        .filter(|w| w[0].1.signum() != w[1].1.signum() && w[1].1 != 0.0)
        .map(|w| w[0].0 + (w[1].0 - w[0].0) * w[0].1 / (w[0].1 - w[1].1))
        .collect();
    if crossings.len() < 3 {
        return Ok((false, format!("only {} zero crossings observed", crossings.len())));
    }
    let half = (crossings[crossings.len() - 1] - crossings[0]) / (crossings.len() - 1) as Real;
    let omega = PI / half;
    let k = 2.0 * PI;
    let dispersion = (omega - k).abs() / k;
    let (slope, _) = balance_slope(&poynting_config("maxwell", 1), &[16, 32, 64])?;
    Ok((
        dispersion <= 0.01 && slope >= 1.7,
        format!("omega/|k| - 1 = {dispersion:.2e} at N = 64 (tol 1e-2); poynting slope {slope:.2} (target >= 1.7)"),
    ))
}

fn random_potential(rng: &mut ChaCha8Rng, m: usize, components: usize) -> Vec<String> {
    let coords = ["x1", "x2", "x3"];
    (0..m * components)
        .map(|_| {
            let amp = rng.random_range(0.1..0.5);
            let phase = rng.random_range(0.0..2.0 * PI);
            let wave: Vec<String> =
                coords[..m].iter().map(|x| format!("{}*{x}", rng.random_range(0..2_i32))).collect();
            format!("\"{amp}*sin(2*pi*({}) + {phase})\"", wave.join(" + "))
        })
        .collect()
}

fn yang_mills_identities(seed: u64) -> Measured {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(8));
    let a3 = random_potential(&mut rng, 3, 3);
    let bianchi_text = format!(
        "scenario = \"su2_yang_mills\"\n[grid]\naxes = [{{cells = 8}}, {{cells = 8}}, {{cells = 8}}]\n[initial]\na = [{}]\n[time]\ndt_over_h = 0.25\nsteps = 1\n",
        a3.join(", ")
    );
    let bianchi = convergence_study(&scenario_config(&bianchi_text)?, StudyAxis::H, &[8, 16, 32], Some(&[Diagnostic::Bianchi]))?;
    let bianchi_slope = bianchi.slope(Diagnostic::Bianchi).unwrap_or(Real::INFINITY);

    let a2 = random_potential(&mut rng, 2, 3);
    let eps = random_potential(&mut rng, 2, 3);
    let charge_text = format!(
        "scenario = \"su2_yang_mills\"\n[grid]\naxes = [{{cells = 8}}, {{cells = 8}}]\n[initial]\na = [{}]\neps = [{}]\n[time]\ndt_over_h = 0.25\nt_end = 0.25\n",
        a2.join(", "),
        eps.join(", ")
    );
    let charge = convergence_study(&scenario_config(&charge_text)?, StudyAxis::H, &[8, 16, 32], Some(&[Diagnostic::Charge]))?;
    let charge_slope = charge.slope(Diagnostic::Charge).unwrap_or(Real::INFINITY);

    let (poynting_slope, _) = balance_slope(&poynting_config("su2_yang_mills", 3), &[16, 24, 32])?;
    Ok((
        bianchi_slope >= 1.0 && charge_slope >= 1.7 && poynting_slope >= 1.7,
        format!(
            "bianchi slope {bianchi_slope:.2} (>= 1), charge slope {charge_slope:.2} (>= 1.7), poynting slope {poynting_slope:.2} (>= 1.7)"
        ),
    ))
}

fn interaction_cancellation(seed: u64) -> Measured {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(9));
    let a = random_potential(&mut rng, 2, 3);
    let phi = random_potential(&mut rng, 2, 1).into_iter().take(3).collect::<Vec<_>>();
    let text = format!(
        "scenario = \"ymh\"\nseed = {seed}\n[grid]\naxes = [{{cells = 16}}, {{cells = 16}}]\n[initial]\nphi = [{}]\nnu = [\"0.2\", \"0\", \"-0.1\"]\na = [{}]\nnoise = 0.01\n[time]\ndt_over_h = 0.25\nsteps = 50\n",
        phi.join(", "),
        a.join(", ")
    );
    let run = Scenario::build(&scenario_config(&text)?)?.run()?;
    let ratio = run.summary.interaction_ratio;
    Ok((ratio <= 1e-8, format!("max |P_gauge + P_matter| / E = {ratio:.1e} over {} samples (tol 1e-8)", run.rows.len())))
}

fn representation_independence(seed: u64) -> Measured {
    let bounded = "axes = [{ cells = 10 }, { cells = 8, periodic = false }]";
    let cases = [
        (
            "klein_gordon",
            "axes = [{ cells = 16, periodic = false }]".to_string(),
            "phi = [\"cos(pi*x1)\"]".to_string(),
            "[[forces.boundary]]\nsector = \"matter\"\nface = \"x1_upper\"\nvalues = [\"0.5*sin(3*t)\"]".to_string(),
        ),
        (
            "higgs",
            bounded.to_string(),
            "phi = [\"1 + 0.2*cos(2*pi*x1)\", \"0.1*sin(pi*x2)\"]\nnu = [\"0\", \"0.2\"]".to_string(),
            "[[forces.boundary]]\nsector = \"matter\"\nface = \"x2_lower\"\nvalues = [\"0.3*sin(2*t)\", \"0.1\"]".to_string(),
        ),
        (
            "maxwell",
            bounded.to_string(),
            "a = [\"0.3*cos(pi*x2)*sin(2*pi*x1)\", \"0.1*cos(2*pi*x1)\"]".to_string(),
            "[[forces.boundary]]\nsector = \"gauge\"\nface = \"x2_upper\"\nvalues = [\"0.5*(1 - cos(2*t))\"]".to_string(),
        ),
        (
            "su2_yang_mills",
            bounded.to_string(),
            "a = [\"0.3*sin(2*pi*x1)\", \"0.2\", \"0.1*cos(pi*x2)\", \"0.1\", \"0\", \"0.2*cos(2*pi*x1)\"]".to_string(),
            "[[forces.boundary]]\nsector = \"gauge\"\nface = \"x2_upper\"\nvalues = [\"0.2*sin(t)\", \"0\", \"0.1*sin(2*pi*x1)\"]".to_string(),
        ),
        (
            "ymh",
            bounded.to_string(),
            "phi = [\"0.5\", \"0.2*sin(2*pi*x1)\", \"0.1*cos(pi*x2)\"]\na = [\"0.3*sin(2*pi*x1)\", \"0.2\", \"0.1\", \"0.1\", \"0\", \"0.2*cos(2*pi*x1)\"]".to_string(),
            "[[forces.boundary]]\nsector = \"matter\"\nface = \"x2_lower\"\nvalues = [\"0.1*sin(t)\", \"0\", \"0\"]\n[[forces.boundary]]\nsector = \"gauge\"\nface = \"x2_upper\"\nvalues = [\"0.2*sin(t)\", \"0\", \"0.1\"]".to_string(),
        ),
    ];
    let mut worst = 0.0_f64;
    let mut parts = Vec::new();
    for (kind, axes, initial, forces) in cases {
        let text = format!(
            "scenario = \"{kind}\"\nrepresentation = \"both\"\nseed = {seed}\n[grid]\n{axes}\n[initial]\n{initial}\nnoise = 0.01\n[forces]\n{forces}\n[time]\ndt_over_h = 0.25\nsteps = 100\n"
        );
        let diff = match Scenario::build(&scenario_config(&text)?)?.run() {
            Ok(run) => run.summary.rep_difference,
            Err(CliError::RepresentationMismatch { difference, .. }) => difference,
            Err(e) => return Err(e),
        };
        worst = worst.max(diff);
        parts.push(format!("{kind} {diff:.1e}"));
    }
    Ok((worst <= 1e-10, format!("100 steps: {} (tol 1e-10)", parts.join(", "))))
}
