use std::sync::Arc;

use greenlab::green::GreenField;
use greenlab::heat::{assemble_laplacian, Grounding};
use greenlab::maximal::{
    g_maximal, hardy_littlewood, local_maximal_ratio, verify_mg_domination,
    verify_scalar_green_maximal, RadiusSearch,
};
use greenlab::sampling::{rng, stratified_pairs, subsample};
use greenlab::space::{build_grid_space, MeasureLaw};
use greenlab::MmSpace;
use proptest::prelude::*;
use rand::Rng;

fn cube(side: usize) -> Arc<MmSpace> {
    Arc::new(build_grid_space(3, side, 0.1, MeasureLaw::Lebesgue).unwrap())
}

fn field(s: &Arc<MmSpace>) -> GreenField {
    let op = Arc::new(assemble_laplacian(s.clone(), Grounding::Dirichlet).unwrap());
    GreenField::new(op, 0.0, 0.0).unwrap()
}

fn random_function(s: &MmSpace, seed: u64) -> Vec<f64> {
    let mut r = rng(seed);
    (0..s.len()).map(|_| r.gen_range(0.0..1.0)).collect()
}

#[test]
fn constants_are_fixed_points() {
    let s = cube(15);
    let f = field(&s);
    let ones = vec![1.0; s.len()];
    let points = subsample(&s.core_points(), 10, &mut rng(1));
    for search in [RadiusSearch::Exact, RadiusSearch::Geometric { ratio: 1.25 }] {
        for v in hardy_littlewood(&s, &ones, &points, search).unwrap() {
            assert!((v - 1.0).abs() < 1e-12);
        }
        for v in g_maximal(&f, &ones, &points, search).unwrap() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }
    let fit = verify_mg_domination(&f, &[ones], &points, RadiusSearch::Exact).unwrap();
    assert!((fit.c - 1.0).abs() < 1e-12);
}

#[test]
fn single_cell_indicator() {
    let s = cube(21);
    let c = s.centre();
    let mut f = vec![0.0; s.len()];
    f[c] = 1.0;
    let x = c + 3;
    let mf = hardy_littlewood(&s, &f, &[x], RadiusSearch::Exact).unwrap()[0];
    // The smallest ball around x reaching the centre is the closed ball of
    // radius 0.3.
    let exact = s.weight(c) / s.volume(x, 0.3 + 1e-9);
    assert!((mf / exact - 1.0).abs() < 1e-12, "{mf} vs {exact}");
}

#[test]
fn green_balls_dominate_like_euclidean_balls() {
    let s = cube(21);
    let f = field(&s);
    let points = subsample(&s.core_points(), 10, &mut rng(2));
    let functions: Vec<Vec<f64>> = (0..5).map(|k| random_function(&s, 10 + k)).collect();
    let fit = verify_mg_domination(&f, &functions, &points, RadiusSearch::Exact).unwrap();
    assert!(fit.c <= 1.2, "{fit:?}");
}

#[test]
fn green_maximal_constant_is_scale_invariant() {
    let s = cube(21);
    let g = field(&s);
    let f: Vec<f64> = (0..s.len())
        .map(|i| if s.is_core(i) { 1.0 } else { 0.0 })
        .collect();
    let pairs = stratified_pairs(
        &s,
        &[s.centre()],
        &s.core_points(),
        (0.3, 0.5),
        8,
        &mut rng(3),
    );
    let a = verify_scalar_green_maximal(&g, &f, &pairs, RadiusSearch::Exact).unwrap();
    let scaled: Vec<f64> = f.iter().map(|v| 2.5 * v).collect();
    let b = verify_scalar_green_maximal(&g, &scaled, &pairs, RadiusSearch::Exact).unwrap();
    assert!(a.cm.is_finite() && a.cm > 0.0);
    assert!((a.cm / b.cm - 1.0).abs() < 1e-12);

    let zero = vec![0.0; s.len()];
    let z = verify_scalar_green_maximal(&g, &zero, &pairs, RadiusSearch::Exact).unwrap();
    assert!(z.rows.is_empty());
    assert_eq!(z.skipped.len(), pairs.len());
}

#[test]
fn green_maximal_rejects_functions_outside_the_core() {
    let s = cube(11);
    let g = field(&s);
    let f = vec![1.0; s.len()];
    let c = s.centre();
    assert!(verify_scalar_green_maximal(&g, &f, &[(c, c + 1)], RadiusSearch::Exact).is_err());
}

#[test]
fn local_maximal_bound_is_stable() {
    let s = cube(15);
    let region = s.core_points();
    let ratios: Vec<f64> = (0..5)
        .map(|k| {
            let mut f = random_function(&s, 20 + k);
            for i in 0..s.len() {
                if !s.is_core(i) {
                    f[i] = 0.0;
                }
            }
            local_maximal_ratio(&s, &f, &region, RadiusSearch::Exact).unwrap()
        })
        .collect();
    let (lo, hi) = ratios
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(a, b), &r| (a.min(r), b.max(r)));
    assert!(lo >= 1.0 && hi / lo < 1.5, "{ratios:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn maximal_function_is_homogeneous_and_monotone(seed in 0u64..1000, alpha in 0.0f64..5.0) {
        let s = cube(11);
        let f = random_function(&s, seed);
        let g: Vec<f64> = f.iter().zip(random_function(&s, seed + 1)).map(|(a, b)| a + b).collect();
        let points = subsample(&(0..s.len()).collect::<Vec<_>>(), 12, &mut rng(seed));
        let mf = hardy_littlewood(&s, &f, &points, RadiusSearch::Exact).unwrap();
        let scaled: Vec<f64> = f.iter().map(|v| alpha * v).collect();
        let ms = hardy_littlewood(&s, &scaled, &points, RadiusSearch::Exact).unwrap();
        let mg = hardy_littlewood(&s, &g, &points, RadiusSearch::Exact).unwrap();
        for k in 0..points.len() {
            prop_assert!((ms[k] - alpha * mf[k]).abs() <= 1e-12 * (1.0 + ms[k]));
            prop_assert!(mf[k] <= mg[k] + 1e-12);
            prop_assert!(mf[k] >= f[points[k]] - 1e-12);
        }
    }
}
