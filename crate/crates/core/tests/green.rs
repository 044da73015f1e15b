use std::f64::consts::PI;
use std::sync::Arc;

use greenlab::green::{
    fit_proportionality, fit_quasi_triangle, g_ball, green_column, quasi_metric,
    verify_green_estimates, GreenField,
};
use greenlab::heat::{assemble_laplacian, Grounding};
use greenlab::sampling::{random_triples, rng, stratified_pairs, subsample};
use greenlab::space::{build_graph_space, build_grid_space, MeasureLaw};
use greenlab::MmSpace;
use proptest::prelude::*;

fn field(n: usize, side: usize) -> (Arc<MmSpace>, GreenField) {
    let s = Arc::new(build_grid_space(n, side, 0.1, MeasureLaw::Lebesgue).unwrap());
    let op = Arc::new(assemble_laplacian(s.clone(), Grounding::Dirichlet).unwrap());
    (s, GreenField::new(op, 0.0, 0.0).unwrap())
}

#[test]
fn newtonian_potential_at_a_core_pair() {
    let (s, f) = field(3, 21);
    let c = s.centre();
    let y = c + 4 * 21;
    f.ensure(&[c]).unwrap();
    let g = f.value(c, y).unwrap();
    assert!((g * 4.0 * PI * 0.4 - 1.0).abs() < 0.1, "{g}");
    assert_eq!(f.value(c, y), f.value(y, c).or(f.value(c, y)));
}

#[test]
fn conservative_graph_has_no_green_function() {
    let g = build_graph_space(3, &[(0, 1, 1.0), (1, 2, 1.0)], &[1.0; 3]).unwrap();
    let op = Arc::new(assemble_laplacian(Arc::new(g), Grounding::Shift(0.0)).unwrap());
    assert!(green_column(op, 0.0, 0.0, 0).is_err());
}

#[test]
fn cutoff_lowers_the_green_function() {
    let s = Arc::new(build_grid_space(3, 15, 0.1, MeasureLaw::Lebesgue).unwrap());
    let op = Arc::new(assemble_laplacian(s.clone(), Grounding::Dirichlet).unwrap());
    let x = s.centre();
    let a = green_column(op.clone(), 0.0, 0.01, x).unwrap();
    let b = green_column(op, 0.0, 0.05, x).unwrap();
    for (u, v) in a.values.iter().zip(&b.values) {
        assert!(*v <= *u + 1e-12);
    }
}

#[test]
fn four_dimensional_ratios_are_scale_free() {
    // In R^4, G = 1/(4 pi^2 d^2) and F = 1/(pi^2 d^2). Below about 4h the
    // lattice anisotropy alone moves single-pair ratios by several percent.
    let (s, f) = field(4, 21);
    let core = s.core_points();
    let pairs = stratified_pairs(&s, &[s.centre()], &core, (0.45, 0.6), 20, &mut rng(1));
    let rep = verify_green_estimates(&f, &pairs, 1e6).unwrap();
    assert!(rep.c2.is_finite());
    assert!(rep.ratio_max / rep.ratio_min - 1.0 < 0.05, "{rep:?}");
    assert!(rep
        .pairs
        .iter()
        .all(|p| (p.ratio / 0.25 - 1.0).abs() < 0.05));
}

#[test]
fn quasi_metric_of_the_cube_is_a_scaled_metric() {
    let (s, f) = field(3, 21);
    let points = subsample(&s.core_points(), 16, &mut rng(2));
    let table = quasi_metric(&f, &points).unwrap();
    assert!((0..table.len()).all(|a| table.get(a, a) == Some(0.0)));
    let fit = fit_proportionality(&s, &table, (0.3, 0.4)).unwrap();
    assert!((fit.prefactor / (4.0 * PI) - 1.0).abs() < 0.05, "{fit:?}");
    let triples = random_triples(&(0..table.len()).collect::<Vec<_>>(), 400, &mut rng(3));
    assert!(fit_quasi_triangle(&table, &triples).ct <= 1.05);
    // x = z: the ratio is exactly one.
    let deg = fit_quasi_triangle(&table, &[[0, 1, 0], [2, 3, 3]]);
    assert_eq!(deg.ct, 1.0);
}

#[test]
fn four_dimensional_quasi_metric_is_quadratic() {
    let (s, f) = field(4, 17);
    let points = subsample(&s.core_points(), 12, &mut rng(4));
    let table = quasi_metric(&f, &points).unwrap();
    let fit = fit_proportionality(&s, &table, (0.3, 0.6)).unwrap();
    assert!((fit.exponent - 2.0).abs() < 0.1, "{fit:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn green_balls_are_nested(a in 1.0f64..6.0, b in 0.0f64..4.0) {
        let (s, f) = field(3, 13);
        let x = s.centre();
        f.ensure(&[x]).unwrap();
        let small = g_ball(&f, x, a).unwrap();
        let large = g_ball(&f, x, a + b).unwrap();
        prop_assert!(small.contains(&x));
        prop_assert!(small.iter().all(|y| large.contains(y)));
    }
}
