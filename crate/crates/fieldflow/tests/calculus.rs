use std::f64::consts::PI;

use fieldflow::connection::{
    codifferential, cov_divergence, cov_ext_deriv, rep_action, rep_action_adjoint, LieAlgebra,
    LieRepresentation, LinearConnection,
};
use fieldflow::exterior::{
    contract_point, musical, phi_iso, pullback_on_nodes, wedge_pair, FormField, Musical,
    MusicalSlots,
};
use fieldflow::grid::{induced_boundary_data, AxisSpec, FiberMetric, MetricField, RectGrid};
use nalgebra::Matrix3;
use proptest::prelude::*;

fn slope(hs: &[f64], rs: &[f64]) -> f64 {
    let xs: Vec<f64> = hs.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = rs.iter().map(|r| r.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let num: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let den: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    num / den
}

fn curved(grid: &RectGrid) -> MetricField {
    MetricField::from_fn(grid, |x| {
        let mut g = Matrix3::identity();
        g[(0, 0)] = 1.0 + 0.3 * (2.0 * PI * x[1]).cos().powi(2);
        g[(0, 1)] = 0.2 * (2.0 * PI * x[0]).sin();
        g[(1, 0)] = g[(0, 1)];
        g[(1, 1)] = 1.2 + 0.1 * x[0];
        g
    })
    .unwrap()
}

fn integrate_pair(a: &FormField, b: &FormField, metric: &MetricField, grid: &RectGrid) -> f64 {
    let raised = musical(
        b,
        Musical::Sharp,
        MusicalSlots::Base,
        metric,
        &FiberMetric::identity(b.fiber()),
    );
    (0..grid.len())
        .map(|n| grid.weight(n) * metric.sqrt_det(n) * contract_point(a.at(n), raised.at(n)))
        .sum()
}

fn divergence_residual(n: usize, k: usize) -> f64 {
    let grid = RectGrid::new(vec![
        AxisSpec::bounded(n + 1, 1.0),
        AxisSpec::bounded(n + 1, 1.0),
    ])
    .unwrap();
    let metric = MetricField::flat(&grid);
    let conn = LinearConnection::from_fn(&grid, 2, |x, i, a, b| {
        0.4 * (x[0] + 2.0 * x[1] + (i + 2 * a + 3 * b) as f64).sin()
    });
    let chi = FormField::from_fn(&grid, k + 1, 2, |x, s, a| {
        (1.3 * x[0] - 0.7 * x[1] + s.bits() as f64 + a as f64).cos() * (1.0 + x[0] * x[1])
    });
    let phi = FormField::from_fn(&grid, k, 2, |x, s, a| {
        (2.0 * x[0] + x[1] * x[1] + 0.5 * (s.bits() + a as u8) as f64).sin()
    });
    let dphi = cov_ext_deriv(&grid, Some(&conn), &phi).unwrap();
    let div = cov_divergence(&grid, Some(&conn), &chi).unwrap();
    let sign = if k.is_multiple_of(2) { 1.0 } else { -1.0 };
    let interior: f64 = (0..grid.len())
        .map(|p| {
            grid.weight(p)
                * (contract_point(chi.at(p), dphi.at(p))
                    + sign * contract_point(div.at(p), phi.at(p)))
        })
        .sum();
    let eta = phi_iso(&chi);
    let boundary: f64 = grid
        .faces()
        .into_iter()
        .map(|f| {
            let bd = induced_boundary_data(&grid, &metric, f).unwrap();
            let a = pullback_on_nodes(&phi, f, &bd.nodes);
            let b = pullback_on_nodes(&eta, f, &bd.nodes);
            wedge_pair(&a, &b).unwrap().integrate_face(&bd)
        })
        .sum();
    (interior - boundary).abs()
}

#[test]
fn covariant_divergence_theorem_converges_at_second_order() {
    let levels = [16usize, 32, 64];
    let hs: Vec<f64> = levels.iter().map(|n| 1.0 / *n as f64).collect();
    for k in 0..2 {
        let rs: Vec<f64> = levels.iter().map(|&n| divergence_residual(n, k)).collect();
        assert!(slope(&hs, &rs) >= 1.7, "k = {k}: residuals {rs:?}");
    }
}

#[test]
fn gauge_codifferential_is_the_discrete_adjoint_on_periodic_grids() {
    let grid = RectGrid::new(vec![
        AxisSpec::periodic(12, 1.0),
        AxisSpec::periodic(10, 1.0),
    ])
    .unwrap();
    let metric = curved(&grid);
    let alg = LieAlgebra::su2();
    let a = FormField::from_fn(&grid, 1, 3, |x, s, c| {
        0.6 * (2.0 * PI * (x[0] + s.bits() as f64 * x[1]) + c as f64).sin()
    });
    let conn = LinearConnection::from_gauge(&a, &LieRepresentation::adjoint(&alg)).unwrap();
    for k in 0..2 {
        let alpha = FormField::from_fn(&grid, k, 3, |x, s, c| {
            (2.0 * PI * x[0] + c as f64 + s.bits() as f64).cos()
        });
        let beta = FormField::from_fn(&grid, k + 1, 3, |x, s, c| {
            (2.0 * PI * (x[1] - x[0]) * (1.0 + c as f64) + s.bits() as f64).sin()
        });
        let lhs = integrate_pair(
            &cov_ext_deriv(&grid, Some(&conn), &alpha).unwrap(),
            &beta,
            &metric,
            &grid,
        );
        let rhs = integrate_pair(
            &alpha,
            &codifferential(&grid, &metric, Some(&conn), &beta).unwrap(),
            &metric,
            &grid,
        );
        assert!(
            (lhs - rhs).abs() <= 1e-12 * (1.0 + lhs.abs()),
            "k = {k}: {lhs} vs {rhs}"
        );
    }
}

#[test]
fn leibniz_rule_holds_to_second_order() {
    let residual = |n: usize| {
        let grid =
            RectGrid::new(vec![AxisSpec::periodic(n, 1.0), AxisSpec::periodic(n, 1.0)]).unwrap();
        let f = FormField::from_fn(&grid, 0, 1, |x, _, _| {
            (2.0 * PI * x[0]).sin() * (2.0 * PI * x[1]).cos()
        });
        let w = FormField::from_fn(&grid, 1, 1, |x, s, _| {
            (2.0 * PI * (x[0] + s.bits() as f64 * x[1])).cos()
        });
        let mut fw = w.clone();
        for p in 0..grid.len() {
            let s = f.at(p)[0];
            fw.at_mut(p).iter_mut().for_each(|v| *v *= s);
        }
        let lhs = cov_ext_deriv(&grid, None, &fw).unwrap();
        let df = cov_ext_deriv(&grid, None, &f).unwrap();
        let dw = cov_ext_deriv(&grid, None, &w).unwrap();
        let mut worst: f64 = 0.0;
        for p in 0..grid.len() {
            let wedge = df.at(p)[0] * w.at(p)[1] - df.at(p)[1] * w.at(p)[0];
            worst = worst.max((lhs.at(p)[0] - wedge - f.at(p)[0] * dw.at(p)[0]).abs());
        }
        worst
    };
    let levels = [16usize, 32, 64];
    let hs: Vec<f64> = levels.iter().map(|n| 1.0 / *n as f64).collect();
    let rs: Vec<f64> = levels.iter().map(|&n| residual(n)).collect();
    assert!(slope(&hs, &rs) >= 1.8, "{rs:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjoint_connection_is_metric(a in prop::array::uniform3(-2.0f64..2.0), i in 0usize..2) {
        let grid = RectGrid::new(vec![AxisSpec::periodic(3, 1.0), AxisSpec::periodic(3, 1.0)]).unwrap();
        let alg = LieAlgebra::su2();
        let pot = FormField::from_fn(&grid, 1, 3, |_, s, c| a[c] * (1.0 + s.bits() as f64));
        let conn = LinearConnection::from_gauge(&pot, &LieRepresentation::adjoint(&alg)).unwrap();
        for p in 0..grid.len() {
            for x in 0..3 {
                for y in 0..3 {
                    let mut sym = 0.0;
                    for c in 0..3 {
                        sym += alg.killing(x, c) * conn.get(p, i, c, y) + alg.killing(y, c) * conn.get(p, i, c, x);
                    }
                    prop_assert!(sym.abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn representation_action_and_its_adjoint_are_dual(
        phi in prop::array::uniform3(-2.0f64..2.0),
        xi in prop::array::uniform6(-2.0f64..2.0),
        chi in prop::array::uniform6(-2.0f64..2.0),
    ) {
        let grid = RectGrid::new(vec![AxisSpec::periodic(3, 1.0), AxisSpec::periodic(3, 1.0)]).unwrap();
        let rep = LieRepresentation::adjoint(&LieAlgebra::su2());
        let phi_f = FormField::from_fn(&grid, 0, 3, |_, _, c| phi[c]);
        let xi_f = FormField::from_fn(&grid, 1, 3, |_, s, c| xi[3 * (s.bits() as usize >> 1) + c]);
        let chi_f = FormField::from_fn(&grid, 1, 3, |_, s, c| chi[3 * (s.bits() as usize >> 1) + c]);
        let left = rep_action(&rep, &phi_f, &xi_f).unwrap();
        let right = rep_action_adjoint(&rep, &phi_f, &chi_f).unwrap();
        for p in 0..grid.len() {
            let l = contract_point(chi_f.at(p), left.at(p));
            let r = contract_point(right.at(p), xi_f.at(p));
            prop_assert!((l - r).abs() <= 1e-12 * (1.0 + l.abs()));
        }
    }
}
