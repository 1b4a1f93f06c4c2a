use fieldflow::connection::{LieAlgebra, LieRepresentation};
use fieldflow::exterior::{
    hodge_star, musical, pairing, phi_iso, phi_iso_inv, DualField, FormField, Musical,
    MusicalSlots, Representation,
};
use fieldflow::grid::{induced_boundary_data, AxisSpec, FiberMetric, MetricField, RectGrid};
use nalgebra::Matrix3;
use proptest::prelude::*;

fn small_grid(m: usize) -> RectGrid {
    let axes = (0..m)
        .map(|i| {
            if i == 0 {
                AxisSpec::bounded(4, 1.0)
            } else {
                AxisSpec::periodic(3, 1.0)
            }
        })
        .collect();
    RectGrid::new(axes).unwrap()
}

fn spd(seed: &[f64; 6]) -> Matrix3<f64> {
    let l = Matrix3::new(
        1.0 + seed[0].abs(),
        0.0,
        0.0,
        seed[1],
        1.0 + seed[2].abs(),
        0.0,
        seed[3],
        seed[4],
        1.0 + seed[5].abs(),
    );
    l * l.transpose()
}

fn random_form(grid: &RectGrid, k: usize, n: usize, values: &[f64]) -> FormField {
    let mut f = FormField::zeros_on(grid, k, n);
    for (i, x) in f.data_mut().iter_mut().enumerate() {
        *x = values[i % values.len()] * (1.0 + 0.1 * i as f64).sin();
    }
    f
}

fn shape() -> impl Strategy<Value = (usize, usize, usize)> {
    (1usize..=3).prop_flat_map(|m| (Just(m), 0..=m, 1usize..=3))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phi_round_trips((m, k, n) in shape(), vals in prop::collection::vec(-2.0f64..2.0, 7)) {
        let g = small_grid(m);
        let chi = random_form(&g, k, n, &vals);
        prop_assert!(phi_iso_inv(&phi_iso(&chi)).max_abs_diff(&chi) <= 1e-12);
        let eta = random_form(&g, m - k, n, &vals);
        prop_assert!(phi_iso(&phi_iso_inv(&eta)).max_abs_diff(&eta) <= 1e-12);
    }

    #[test]
    fn double_hodge_sign((m, k, n) in shape(), vals in prop::collection::vec(-2.0f64..2.0, 7), s in prop::array::uniform6(-0.5f64..0.5)) {
        let g = small_grid(m);
        let metric = MetricField::from_fn(&g, |_| spd(&s)).unwrap();
        let w = random_form(&g, k, n, &vals);
        let twice = hodge_star(&hodge_star(&w, &metric), &metric);
        let sign = if (k * (m - k)) % 2 == 0 { 1.0 } else { -1.0 };
        prop_assert!(twice.max_abs_diff(&w.scaled(sign)) <= 1e-12 * (1.0 + w.max_abs()));
    }

    #[test]
    fn musical_maps_are_inverse((m, k, n) in shape(), vals in prop::collection::vec(-2.0f64..2.0, 7), s in prop::array::uniform6(-0.5f64..0.5)) {
        let g = small_grid(m);
        let metric = MetricField::from_fn(&g, |_| spd(&s)).unwrap();
        let kappa = FiberMetric::identity(n);
        let w = random_form(&g, k, n, &vals);
        for slots in [MusicalSlots::Base, MusicalSlots::Fiber, MusicalSlots::Both] {
            let there = musical(&w, Musical::Flat, slots, &metric, &kappa);
            let back = musical(&there, Musical::Sharp, slots, &metric, &kappa);
            prop_assert!(back.max_abs_diff(&w) <= 1e-11 * (1.0 + w.max_abs()));
        }
    }

    #[test]
    fn star_and_dagger_pairings_agree((m, k, n) in shape(), vals in prop::collection::vec(-2.0f64..2.0, 7), s in prop::array::uniform6(-0.5f64..0.5)) {
        let g = small_grid(m);
        let metric = MetricField::from_fn(&g, |_| spd(&s)).unwrap();
        let boundaries: Vec<_> = g.faces().into_iter().map(|f| induced_boundary_data(&g, &metric, f).unwrap()).collect();
        let mut star = DualField::zeros(Representation::Star, &g, k, n);
        star.interior = random_form(&g, k, n, &vals);
        for (_, part) in &mut star.boundary {
            for (i, x) in part.data_mut().iter_mut().enumerate() {
                *x = vals[(i + 3) % vals.len()];
            }
        }
        let phi = random_form(&g, k, n, &vals[1..]);
        let a = pairing(&star, &phi, &g, &boundaries).unwrap();
        let b = pairing(&star.to_rep(Representation::Dagger), &phi, &g, &boundaries).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}

#[test]
fn built_in_algebras_satisfy_the_axioms() {
    for alg in [
        LieAlgebra::u1(),
        LieAlgebra::su2(),
        LieAlgebra::su2().abelianized(),
    ] {
        assert!(alg.antisymmetry_defect() <= 1e-12);
        assert!(alg.jacobi_defect() <= 1e-12);
        assert!(alg.invariance_defect() <= 1e-12);
        assert!(LieRepresentation::adjoint(&alg).invariance_defect() <= 1e-12);
    }
    for q in [-1.0, 0.5, 2.0] {
        assert!(LieRepresentation::u1_charged(q).invariance_defect() <= 1e-12);
    }
}

#[test]
fn su2_killing_form_is_minus_identity() {
    let alg = LieAlgebra::su2();
    for a in 0..3 {
        for b in 0..3 {
            let expect = if a == b { -1.0 } else { 0.0 };
            assert!((alg.killing(a, b) - expect).abs() <= 1e-14);
        }
    }
}

#[test]
fn malformed_structure_constants_are_rejected() {
    let mut f = vec![0.0; 8];
    f[1] = 1.0;
    assert!(LieAlgebra::new(2, f).is_err());
    assert!(LieAlgebra::new(2, vec![0.0; 3]).is_err());
}
