use greenlab::sampling::rng;
use greenlab::space::{build_grid_space, MeasureLaw};
use greenlab::transport::{
    geodesic_drift, geodesic_speed_ratio, mccann_interpolate, solve_w2, solve_w2_points,
    verify_cd_entropy, verify_geodesic_pushforward, DiscreteMeasure,
};
use greenlab::{Error, MmSpace};
use proptest::prelude::*;
use rand::Rng;

fn plane() -> MmSpace {
    build_grid_space(2, 25, 0.1, MeasureLaw::Lebesgue).unwrap()
}

/// Lattice points of the `k × k` block with lower corner at grid `(i, j)`.
fn block(s: &MmSpace, i: usize, j: usize, k: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for a in 0..k {
        for b in 0..k {
            let x = [-1.2 + 0.1 * (i + a) as f64, -1.2 + 0.1 * (j + b) as f64];
            out.push(s.nearest_point(&x).unwrap());
        }
    }
    out
}

#[test]
fn equal_measures_give_the_identity_plan() {
    let s = plane();
    let mu = DiscreteMeasure::uniform(block(&s, 8, 8, 3));
    let plan = solve_w2(&s, &mu, &mu).unwrap();
    assert_eq!(plan.w2(), 0.0);
    assert!(plan.entries.iter().all(|&(i, j, _)| i == j));
}

#[test]
fn single_atoms_cost_their_distance() {
    let s = plane();
    let (a, b) = (s.centre(), s.centre() + 3 * 25 + 4);
    let plan = solve_w2(
        &s,
        &DiscreteMeasure::uniform(vec![a]),
        &DiscreteMeasure::uniform(vec![b]),
    )
    .unwrap();
    assert_eq!(plan.entries.len(), 1);
    assert!((plan.w2() - 0.5).abs() < 1e-12);
}

#[test]
fn crossing_instance_matches_brute_force() {
    let x0 = [0.0, 0.0, 1.0, 0.0];
    let x1 = [1.1, 0.1, -0.1, 0.1];
    let plan = solve_w2_points(&x0, &[0.5, 0.5], &x1, &[0.5, 0.5], 2).unwrap();
    let sq = |p: &[f64], q: &[f64]| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2);
    let straight = 0.5 * (sq(&x0[..2], &x1[..2]) + sq(&x0[2..], &x1[2..]));
    let crossed = 0.5 * (sq(&x0[..2], &x1[2..]) + sq(&x0[2..], &x1[..2]));
    assert!((plan.cost - straight.min(crossed)).abs() < 1e-12);
    assert_eq!(
        plan.entries.iter().map(|e| (e.0, e.1)).collect::<Vec<_>>(),
        [(0, 1), (1, 0)]
    );
}

#[test]
fn mismatched_masses_are_rejected() {
    let err = solve_w2_points(&[0.0], &[1.0], &[1.0], &[2.0], 1).unwrap_err();
    assert!(matches!(err, Error::MassMismatch(..)));
}

#[test]
fn translation_geodesic() {
    let s = plane();
    let mu0 = DiscreteMeasure::uniform(block(&s, 6, 8, 3));
    let mu1 = DiscreteMeasure::uniform(block(&s, 12, 8, 3));
    let plan = solve_w2(&s, &mu0, &mu1).unwrap();
    assert!((plan.w2() - 0.6).abs() < 1e-12);

    let start = mccann_interpolate(&s, &plan, 0.0).unwrap();
    assert_eq!(start.measure.positions, plan.source_coords);
    let ratios: Vec<f64> = [0.0, 0.5, 1.0]
        .iter()
        .map(|&t| mccann_interpolate(&s, &plan, t).unwrap().max_density_ratio)
        .collect();
    assert!(
        ratios.iter().all(|r| (r / ratios[0] - 1.0).abs() < 1e-12),
        "{ratios:?}"
    );
    assert!((geodesic_speed_ratio(&plan, 0.0, 0.5).unwrap() - 1.0).abs() < 0.01);

    let drift = geodesic_drift(&s, &plan, 2.0).unwrap();
    let rep = verify_geodesic_pushforward(&s, &plan, &drift, 0.25, 0.75, 20).unwrap();
    assert!(rep.w2_error < 1e-6, "{rep:?}");
}

#[test]
fn entropy_inequality_is_tight_at_the_endpoints() {
    let s = plane();
    let mu0 = DiscreteMeasure::uniform(block(&s, 6, 8, 3));
    let mu1 = DiscreteMeasure::uniform(block(&s, 12, 8, 3));
    let plan = solve_w2(&s, &mu0, &mu1).unwrap();
    let rep = verify_cd_entropy(&s, &plan, 0.0, 3.0, &[0.0, 1.0], 1).unwrap();
    for row in &rep.rows {
        assert!(row.slack.abs() <= 1e-12 * row.lhs.abs(), "{row:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn plans_are_feasible_and_certified(seed in 0u64..10_000, m in 1usize..12, n in 1usize..12) {
        let mut r = rng(seed);
        let mut cloud = |k: usize| -> (Vec<f64>, Vec<f64>) {
            let x = (0..2 * k).map(|_| r.gen_range(-1.0..1.0)).collect();
            let a: Vec<f64> = (0..k).map(|_| r.gen_range(0.1..1.0)).collect();
            (x, a)
        };
        let (x0, a) = cloud(m);
        let (x1, mut b) = cloud(n);
        let scale = a.iter().sum::<f64>() / b.iter().sum::<f64>();
        b.iter_mut().for_each(|v| *v *= scale);
        let plan = solve_w2_points(&x0, &a, &x1, &b, 2).unwrap();
        let mut rows = vec![0.0; m];
        let mut cols = vec![0.0; n];
        for &(i, j, w) in &plan.entries {
            prop_assert!(w >= 0.0);
            rows[i] += w;
            cols[j] += w;
        }
        for (u, v) in rows.iter().zip(&a).chain(cols.iter().zip(&b)) {
            prop_assert!((u - v).abs() <= 1e-10);
        }
        prop_assert!(plan.duality_gap <= 1e-8);
    }

    #[test]
    fn uniform_plans_beat_every_permutation(seed in 0u64..10_000) {
        let mut r = rng(seed);
        let x0: Vec<f64> = (0..8).map(|_| r.gen_range(-1.0..1.0)).collect();
        let x1: Vec<f64> = (0..8).map(|_| r.gen_range(-1.0..1.0)).collect();
        let plan = solve_w2_points(&x0, &[0.25; 4], &x1, &[0.25; 4], 2).unwrap();
        let sq = |i: usize, j: usize| (x0[2 * i] - x1[2 * j]).powi(2) + (x0[2 * i + 1] - x1[2 * j + 1]).powi(2);
        let mut best = f64::INFINITY;
        for code in 0..256usize {
            let p: Vec<usize> = (0..4).map(|k| (code >> (2 * k)) & 3).collect();
            if (0..4).all(|j| p.contains(&j)) {
                best = best.min(p.iter().enumerate().map(|(i, &j)| 0.25 * sq(i, j)).sum());
            }
        }
        prop_assert!((plan.cost - best).abs() <= 1e-12);
    }
}
