use std::f64::consts::PI;
use std::sync::Arc;

use fieldflow::connection::{codifferential, LieAlgebra, LieRepresentation};
use fieldflow::dynamics::{
    energy_balance, star_to_dagger, DynamicsError, ForceModel, GaugeSector, MatterSector,
    PontryaginState, Scheme, System,
};
use fieldflow::exterior::{
    hodge_star, hodge_star_boundary, lower_point, pullback_on_nodes, Basis, FormField,
    Representation,
};
use fieldflow::grid::{AxisSpec, Face, FiberMetric, MetricField, RectGrid, Side};
use fieldflow::lagrangian::{matter_density, Potential};
use nalgebra::Matrix3;

fn curved(grid: &RectGrid) -> MetricField {
    MetricField::from_fn(grid, |x| {
        let mut g = Matrix3::identity();
        g[(0, 0)] = 1.0 + 0.2 * (2.0 * PI * x[1]).sin().powi(2);
        g[(0, 1)] = 0.1 * (2.0 * PI * x[0]).cos();
        g[(1, 0)] = g[(0, 1)];
        g[(1, 1)] = 1.1;
        g
    })
    .unwrap()
}

fn ym(grid: RectGrid, metric: MetricField, alg: LieAlgebra, rep: Representation) -> System {
    let m = grid.dim();
    System::new(grid, metric, rep)
        .unwrap()
        .with_gauge(GaugeSector::yang_mills(m, alg).unwrap())
        .unwrap()
}

fn wave_potential(grid: &RectGrid, amp: f64) -> FormField {
    FormField::from_fn(grid, 1, 3, |x, s, c| {
        amp * (2.0 * PI * (x[0] + 0.5 * x[1]) + c as f64 + s.bits() as f64).sin()
    })
}

#[test]
fn yang_mills_equations_follow_from_the_gauge_rate() {
    let grid = RectGrid::new(vec![
        AxisSpec::periodic(10, 1.0),
        AxisSpec::periodic(12, 1.0),
    ])
    .unwrap();
    let metric = curved(&grid);
    let mut forces = ForceModel::default();
    forces.gauge.interior = Some(Arc::new(|x, t, o| {
        for (i, v) in o.iter_mut().enumerate() {
            *v = (x[0] + i as f64 + t).sin();
        }
    }));
    let sys = ym(
        grid.clone(),
        metric.clone(),
        LieAlgebra::su2(),
        Representation::Star,
    )
    .with_forces(forces)
    .unwrap();
    let eps = FormField::from_fn(&grid, 1, 3, |x, s, c| {
        (2.0 * PI * x[1] + s.bits() as f64 * c as f64).cos()
    });
    let state = sys
        .initial_state(0.3, None, Some((wave_potential(&grid, 0.7), eps)))
        .unwrap();
    let rate = sys
        .assemble_gauge_rhs(&state, Representation::Star)
        .unwrap()
        .rate;
    let b = sys.curvature(&state).unwrap();
    let conn = sys.gauge_connection(&state).unwrap();
    let delta_b = codifferential(&grid, &metric, Some(&conn), &b).unwrap();
    let j = sys.total_current(&state).unwrap();
    let basis = Basis::new(2, 1);
    let mut eps_dot = vec![0.0; 6];
    for p in 0..grid.len() {
        let pm = metric.at(p);
        lower_point(&basis, 3, pm, rate.at(p), &mut eps_dot);
        for s in 0..6 {
            let e_dot = -eps_dot[s] / pm.sqrt_det;
            let residual = e_dot - delta_b.at(p)[s] + j.at(p)[s];
            assert!(residual.abs() < 1e-10, "node {p} slot {s}: {residual}");
        }
    }
}

#[test]
fn star_and_dagger_trajectories_coincide() {
    let grid = RectGrid::new(vec![
        AxisSpec::periodic(12, 1.0),
        AxisSpec::bounded(11, 1.0),
    ])
    .unwrap();
    let metric = curved(&grid);
    let mut forces = ForceModel::default();
    forces.gauge.boundary.push((
        Face::new(1, Side::Upper),
        Arc::new(|x, t, o| o[0] = t * (2.0 * PI * x[0]).sin()),
    ));
    let run = |rep| {
        let sys = ym(grid.clone(), metric.clone(), LieAlgebra::su2(), rep)
            .with_forces(forces.clone())
            .unwrap();
        let mut s = sys
            .initial_state(
                0.0,
                None,
                Some((wave_potential(&grid, 0.3), FormField::zeros_on(&grid, 1, 3))),
            )
            .unwrap();
        for _ in 0..20 {
            s = sys.step(&s, 0.02, Scheme::Leapfrog).unwrap();
        }
        s
    };
    let a = run(Representation::Star);
    let b = run(Representation::Dagger);
    assert!(a.max_difference(&b) < 1e-10);
    assert!(
        star_to_dagger(&a.gauge.as_ref().unwrap().p.interior)
            .max_abs_diff(&b.gauge.as_ref().unwrap().p.interior)
            < 1e-10
    );
}

#[test]
fn zeroed_structure_constants_reproduce_maxwell_exactly() {
    let grid = RectGrid::new(vec![
        AxisSpec::periodic(16, 1.0),
        AxisSpec::periodic(8, 1.0),
    ])
    .unwrap();
    let a3 = wave_potential(&grid, 0.4);
    let mut a1 = FormField::zeros_on(&grid, 1, 1);
    for p in 0..grid.len() {
        for s in 0..2 {
            a1.at_mut(p)[s] = a3.at(p)[3 * s];
        }
    }
    let abel = ym(
        grid.clone(),
        MetricField::flat(&grid),
        LieAlgebra::su2().abelianized(),
        Representation::Star,
    );
    let maxwell = ym(
        grid.clone(),
        MetricField::flat(&grid),
        LieAlgebra::u1(),
        Representation::Star,
    );
    let mut s3 = abel
        .initial_state(0.0, None, Some((a3, FormField::zeros_on(&grid, 1, 3))))
        .unwrap();
    let mut s1 = maxwell
        .initial_state(0.0, None, Some((a1, FormField::zeros_on(&grid, 1, 1))))
        .unwrap();
    for _ in 0..25 {
        s3 = abel.step(&s3, 0.01, Scheme::Leapfrog).unwrap();
        s1 = maxwell.step(&s1, 0.01, Scheme::Leapfrog).unwrap();
    }
    let (g3, g1) = (s3.gauge.unwrap(), s1.gauge.unwrap());
    for p in 0..grid.len() {
        for s in 0..2 {
            assert_eq!(g3.q.at(p)[3 * s].to_bits(), g1.q.at(p)[s].to_bits());
            assert_eq!(g3.v.at(p)[3 * s].to_bits(), g1.v.at(p)[s].to_bits());
        }
    }
}

fn rod(n: usize, upper: f64, lower: f64) -> System {
    let grid = RectGrid::new(vec![AxisSpec::bounded(n, 1.0)]).unwrap();
    let metric = MetricField::flat(&grid);
    let mut forces = ForceModel::default();
    forces.matter.boundary.push((
        Face::new(0, Side::Upper),
        Arc::new(move |_, _, o| o[0] = upper),
    ));
    forces.matter.boundary.push((
        Face::new(0, Side::Lower),
        Arc::new(move |_, _, o| o[0] = lower),
    ));
    System::new(grid, metric, Representation::Star)
        .unwrap()
        .with_matter(MatterSector::quadratic(
            matter_density(1, FiberMetric::identity(1), Potential::Zero).unwrap(),
        ))
        .unwrap()
        .with_forces(forces)
        .unwrap()
}

#[test]
fn constant_boundary_current_supports_a_linear_static_profile() {
    let slope = 0.8;
    let sys = rod(17, slope, -slope);
    let grid = sys.grid().clone();
    let phi = FormField::from_fn(&grid, 0, 1, |x, _, _| slope * x[0] - 0.1);
    let s = sys
        .initial_state(0.0, Some((phi, FormField::zeros_on(&grid, 0, 1))), None)
        .unwrap();
    let r = sys.assemble_matter_rhs(&s, Representation::Star).unwrap();
    assert!(r.rate.max_abs() < 1e-12);
    assert!(r.boundary_residual < 1e-12);

    let wrong = rod(17, 0.0, 0.0);
    let s = wrong
        .initial_state(
            0.0,
            Some((
                FormField::from_fn(&grid, 0, 1, |x, _, _| slope * x[0]),
                FormField::zeros_on(&grid, 0, 1),
            )),
            None,
        )
        .unwrap();
    assert!(
        (wrong
            .assemble_matter_rhs(&s, Representation::Star)
            .unwrap()
            .boundary_residual
            - slope)
            .abs()
            < 1e-12
    );
}

#[test]
fn coordinate_form_of_the_gauge_boundary_condition() {
    for m in 2..=3 {
        let axes = (0..m)
            .map(|i| {
                if i == m - 1 {
                    AxisSpec::bounded(5, 1.0)
                } else {
                    AxisSpec::periodic(4, 1.0)
                }
            })
            .collect();
        let grid = RectGrid::new(axes).unwrap();
        let metric = MetricField::from_fn(&grid, |x| {
            let mut g = Matrix3::identity();
            g[(0, 0)] = 1.3 + 0.2 * x[0];
            g[(0, 1)] = 0.25;
            g[(1, 0)] = 0.25;
            g[(1, m - 1)] += 0.15;
            g[(m - 1, 1)] += 0.15;
            g[(m - 1, m - 1)] = 0.9;
            g
        })
        .unwrap();
        let sys = ym(
            grid.clone(),
            metric.clone(),
            LieAlgebra::u1(),
            Representation::Star,
        );
        let b = FormField::from_fn(&grid, 2, 1, |x, s, _| {
            (3.0 * x[0] + s.bits() as f64).sin() + x[m - 1]
        });
        let star_b = hodge_star(&b, &metric);
        let two = Basis::new(m, 2);
        for bd in sys.boundaries() {
            let j = hodge_star_boundary(&pullback_on_nodes(&star_b, bd.face, &bd.nodes), bd);
            let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
            for (kf, &node) in bd.nodes.iter().enumerate() {
                let n = bd.normal[kf];
                for t in (0..m).filter(|&t| t != bd.face.axis) {
                    let mut inb = 0.0;
                    for (s, mi) in two.indices().iter().enumerate() {
                        let ax = mi.to_vec();
                        if ax[1] == t {
                            inb += n[ax[0]] * b.get(node, s, 0);
                        } else if ax[0] == t {
                            inb -= n[ax[1]] * b.get(node, s, 0);
                        }
                    }
                    let slot = if t < bd.face.axis { t } else { t - 1 };
                    assert!(
                        (inb - sign * j.get(kf, slot, 0)).abs() < 1e-12,
                        "m = {m}, face {:?}",
                        bd.face
                    );
                }
            }
        }
    }
}

#[test]
fn legendre_consistency_and_zero_boundary_momenta_after_steps() {
    let grid = RectGrid::new(vec![
        AxisSpec::bounded(12, 1.0),
        AxisSpec::periodic(10, 1.0),
    ])
    .unwrap();
    let metric = curved(&grid);
    let alg = LieAlgebra::su2();
    let dens = matter_density(
        2,
        FiberMetric::identity(3),
        Potential::Higgs {
            lambda: 0.3,
            mu: 0.6,
        },
    )
    .unwrap();
    let sys = System::new(grid.clone(), metric, Representation::Dagger)
        .unwrap()
        .with_gauge(GaugeSector::yang_mills(2, alg.clone()).unwrap())
        .unwrap()
        .with_matter(MatterSector::quadratic(dens).with_coupling(LieRepresentation::adjoint(&alg)))
        .unwrap();
    let phi = FormField::from_fn(&grid, 0, 3, |x, _, c| (PI * x[0]).cos() * (1.0 + c as f64));
    let mut s = sys
        .initial_state(
            0.0,
            Some((phi, FormField::zeros_on(&grid, 0, 3))),
            Some((
                FormField::zeros_on(&grid, 1, 3),
                FormField::zeros_on(&grid, 1, 3),
            )),
        )
        .unwrap();
    for _ in 0..10 {
        s = sys.step(&s, 0.01, Scheme::Leapfrog).unwrap();
        assert!(sys.legendre_defect(&s).unwrap() < 1e-10);
        assert!(s.matter.as_ref().unwrap().p.boundary_is_zero());
        assert!(s.gauge.as_ref().unwrap().p.boundary_is_zero());
    }
    let sample = sys.sample(&s).unwrap();
    assert!(
        (sample.interaction_gauge + sample.interaction_matter).abs() <= 1e-12 * sample.energy()
    );
}

#[test]
fn boundary_power_appears_only_on_the_forced_face() {
    let grid = RectGrid::new(vec![AxisSpec::bounded(9, 1.0), AxisSpec::bounded(9, 1.0)]).unwrap();
    let mut forces = ForceModel::default();
    forces.gauge.boundary.push((
        Face::new(0, Side::Lower),
        Arc::new(|x, _, o| {
            o[0] = x[1];
            o[2] = 1.0;
        }),
    ));
    let sys = ym(
        grid.clone(),
        MetricField::flat(&grid),
        LieAlgebra::su2(),
        Representation::Star,
    )
    .with_forces(forces)
    .unwrap();
    let eps = FormField::from_fn(&grid, 1, 3, |x, _, _| 1.0 + x[1]);
    let s = sys
        .initial_state(0.0, None, Some((FormField::zeros_on(&grid, 1, 3), eps)))
        .unwrap();
    let sample = sys.sample(&s).unwrap();
    for (bd, p) in sys.boundaries().iter().zip(&sample.power_boundary) {
        if bd.face == Face::new(0, Side::Lower) {
            assert!(p.abs() > 1e-3);
        } else {
            assert_eq!(*p, 0.0);
        }
    }
}

#[test]
fn isolated_rk4_and_leapfrog_conserve_energy() {
    let grid = RectGrid::new(vec![AxisSpec::periodic(32, 1.0)]).unwrap();
    let dens = matter_density(
        1,
        FiberMetric::identity(2),
        Potential::Higgs {
            lambda: 0.5,
            mu: 1.0,
        },
    )
    .unwrap();
    let sys = System::new(grid.clone(), MetricField::flat(&grid), Representation::Star)
        .unwrap()
        .with_matter(MatterSector::quadratic(dens))
        .unwrap();
    let phi = FormField::from_fn(&grid, 0, 2, |x, _, c| (2.0 * PI * x[0] + c as f64).sin());
    for scheme in [Scheme::Leapfrog, Scheme::Rk4] {
        let mut s = sys
            .initial_state(
                0.0,
                Some((phi.clone(), FormField::zeros_on(&grid, 0, 2))),
                None,
            )
            .unwrap();
        let mut samples = vec![sys.sample(&s).unwrap()];
        for _ in 0..200 {
            s = sys.step(&s, 1.0 / 128.0, scheme).unwrap();
            samples.push(sys.sample(&s).unwrap());
        }
        let e0 = samples[0].energy();
        let drift = samples
            .iter()
            .map(|x| (x.energy() - e0).abs())
            .fold(0.0, f64::max)
            / e0;
        assert!(drift < 1e-3, "{scheme:?}: {drift}");
        let report = energy_balance(&samples).unwrap();
        assert!(report.max_abs() < 1e-2 * e0);
        assert!(samples.iter().all(|x| x.power() == 0.0));
    }
}

#[test]
fn missing_sectors_and_mismatched_algebras_are_errors() {
    let grid = RectGrid::new(vec![AxisSpec::periodic(8, 1.0), AxisSpec::periodic(8, 1.0)]).unwrap();
    let sys = ym(
        grid.clone(),
        MetricField::flat(&grid),
        LieAlgebra::u1(),
        Representation::Star,
    );
    let s = PontryaginState {
        t: 0.0,
        matter: None,
        gauge: None,
    };
    assert!(matches!(
        sys.assemble_matter_rhs(&s, Representation::Star),
        Err(DynamicsError::MissingSector(_))
    ));
    assert!(matches!(
        sys.charge_density(&s),
        Err(DynamicsError::MissingSector(_))
    ));
    let dens = matter_density(2, FiberMetric::identity(3), Potential::Zero).unwrap();
    let coupled = sys.with_matter(
        MatterSector::quadratic(dens).with_coupling(LieRepresentation::adjoint(&LieAlgebra::su2())),
    );
    assert!(matches!(coupled, Err(DynamicsError::Inconsistent(_))));
}
