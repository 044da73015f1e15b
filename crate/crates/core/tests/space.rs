use std::f64::consts::PI;

use greenlab::space::{build_graph_space, build_grid_space, distortion_coefficients, MeasureLaw};
use greenlab::{unit_ball_volume, Error, MmSpace};
use proptest::prelude::*;

fn r3() -> MmSpace {
    build_grid_space(3, 21, 0.1, MeasureLaw::Lebesgue).unwrap()
}

#[test]
fn lattice_ball_volumes_match_euclidean_balls() {
    let s = r3();
    let c = s.centre();
    let cell = 0.1f64.powi(3);
    // Open balls: lattice vectors with |v|² < 9 and < 25.
    assert!((s.volume(c, 0.3) - 93.0 * cell).abs() < 1e-12);
    assert!((s.volume(c, 0.5) - 485.0 * cell).abs() < 1e-12);
    let closed = s.volume(c, 0.5 + 1e-9);
    assert!((closed / (unit_ball_volume(3) * 0.125) - 1.0).abs() < 0.05);
    assert!(s.ball(c, 0.0).is_empty());
    assert_eq!(s.volume(c, 0.0), 0.0);
}

#[test]
fn interior_mask_drops_the_outer_shell() {
    let s = r3();
    let outer = (0..s.len()).filter(|&i| !s.is_interior(i)).count();
    assert_eq!(outer, 21usize.pow(3) - 19usize.pow(3));
}

#[test]
fn graph_metrics_follow_shortest_paths() {
    let cycle = build_graph_space(
        4,
        &[(0, 1, 1.0), (1, 2, 1.0), (2, 3, 1.0), (3, 0, 1.0)],
        &[1.0; 4],
    )
    .unwrap();
    assert_eq!(cycle.dist(0, 2), 2.0);
    assert_eq!(cycle.dist(1, 3), 2.0);
    let path = build_graph_space(3, &[(0, 1, 1.0), (1, 2, 1.0)], &[0.5, 1.0, 2.0]).unwrap();
    let mut ball = path.ball(1, 1.5);
    ball.sort_unstable();
    assert_eq!(ball, vec![0, 1, 2]);
    assert_eq!(path.volume(1, 1.5), 3.5);
}

#[test]
fn tail_integrals_on_the_cube() {
    let s = r3();
    let (f, h) = s.f_h_profiles(s.centre(), &[0.5]).unwrap();
    let closed = 3.0 / (4.0 * PI * 0.5);
    assert!((f[0] / closed - 1.0).abs() < 0.02, "{f:?}");
    assert!((h[0] / closed - 1.0).abs() < 0.02, "{h:?}");
    let rep = s.verify_integral_identities(s.centre(), 0.6).unwrap();
    assert!(rep.f_residual <= 0.02 && rep.h_residual <= 0.02, "{rep:?}");
}

#[test]
fn planar_tail_is_parabolic() {
    let s = build_grid_space(2, 21, 0.1, MeasureLaw::Lebesgue).unwrap();
    assert!(matches!(
        s.f_h_profiles(s.centre(), &[0.3]),
        Err(Error::NonParabolic(_))
    ));
}

#[test]
fn doubling_ratio_of_the_cube() {
    let s = r3();
    let rep = s
        .doubling_profile(&[0.4, 0.5], &[s.centre()], Some(3.0))
        .unwrap();
    for row in &rep.ratios {
        for &r in row {
            assert!((r / 8.0 - 1.0).abs() < 0.15, "{rep:?}");
        }
    }
}

#[test]
fn distortion_coefficients_at_zero_curvature() {
    let d = distortion_coefficients(0.0, 5.0, 0.3, 2.0).unwrap();
    assert!((d.sigma - 0.3).abs() < 1e-15);
    assert!((d.tau - 0.3).abs() < 1e-12);
    let d = distortion_coefficients(1.0, 2.0, 0.5, 5.0).unwrap();
    assert!(d.sigma.is_infinite());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn volume_is_monotone_in_the_radius(i in 0usize..9261, r in 0.0f64..0.8, dr in 0.0f64..0.4) {
        let s = r3();
        prop_assert!(s.volume(i, r) <= s.volume(i, r + dr));
    }

    #[test]
    fn distance_is_symmetric_and_nearest_point_inverts_coords(i in 0usize..9261, j in 0usize..9261) {
        let s = r3();
        prop_assert_eq!(s.dist(i, j), s.dist(j, i));
        prop_assert_eq!(s.nearest_point(&s.coords(i).unwrap()), Some(i));
    }

    #[test]
    fn scaled_weights_scale_volumes(alpha in 0.1f64..10.0, r in 0.05f64..0.7) {
        let s = r3();
        let t = s.scale_weights(alpha);
        let c = s.centre();
        prop_assert!((t.volume(c, r) - alpha * s.volume(c, r)).abs() <= 1e-12 * t.volume(c, r).max(1.0));
    }
}
