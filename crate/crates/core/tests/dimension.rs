use greenlab::dimension::{
    constancy_diagnostic, core_dimension_summary, default_window, estimate_dimensions,
    write_dimension_csv, Window,
};
use greenlab::flow::{integrate_rlf, make_field, FieldKind};
use greenlab::sampling::{rng, subsample};
use greenlab::space::{build_cloud_space, build_grid_space, MeasureLaw};

fn seeds_near_centre(s: &greenlab::MmSpace, radius: f64, count: usize) -> Vec<usize> {
    let c = s.centre();
    let pts: Vec<usize> = s.ball(c, radius);
    subsample(&pts, count, &mut rng(11))
}

#[test]
fn every_core_point_is_three_dimensional() {
    let s = build_grid_space(3, 89, 1.0 / 44.0, MeasureLaw::Lebesgue).unwrap();
    let w = default_window(&s).unwrap();
    let sum = core_dimension_summary(&s, w);
    assert_eq!(sum.failures, 0);
    assert_eq!(sum.histogram.len(), 1, "{sum:?}");
    assert!(sum.histogram.contains_key(&3));
    assert!(sum.theta_min > 0.85 && sum.theta_max < 1.15, "{sum:?}");
}

#[test]
fn rotation_and_shear_keep_the_dimension() {
    let s = build_grid_space(3, 89, 1.0 / 44.0, MeasureLaw::Lebesgue).unwrap();
    let w = default_window(&s).unwrap();
    let seeds = seeds_near_centre(&s, 0.35, 400);
    let rot = make_field(
        FieldKind::Rotation {
            omega: 1.0,
            plane: [0, 1],
        },
        &s,
    )
    .unwrap();
    let flow = integrate_rlf(&s, &rot, &seeds, 0.0, 1.0, None).unwrap();
    let rep = constancy_diagnostic(&s, &flow, w, 0.05).unwrap();
    assert_eq!(rep.before.get(&3), Some(&seeds.len()));
    assert_eq!(rep.after.get(&3), Some(&seeds.len()));
    assert_eq!(rep.tv_distance, 0.0);
    assert!(!rep.violation);

    let shear = make_field(
        FieldKind::Shear {
            alpha: 0.7,
            amplitude: 1.0,
            along: 0,
            across: 1,
        },
        &s,
    )
    .unwrap();
    let flow = integrate_rlf(&s, &shear, &seeds, 0.0, 0.5, None).unwrap();
    let rep = constancy_diagnostic(&s, &flow, w, 0.05).unwrap();
    assert!(rep.tv_distance <= 0.05, "{rep:?}");
    assert!(!rep.violation);
}

#[test]
fn too_few_pushforward_samples() {
    let s = build_grid_space(3, 89, 1.0 / 44.0, MeasureLaw::Lebesgue).unwrap();
    let w = default_window(&s).unwrap();
    let rot = make_field(
        FieldKind::Rotation {
            omega: 1.0,
            plane: [0, 1],
        },
        &s,
    )
    .unwrap();
    let flow = integrate_rlf(&s, &rot, &seeds_near_centre(&s, 0.2, 10), 0.0, 0.1, None).unwrap();
    assert!(constancy_diagnostic(&s, &flow, w, 0.05).is_err());
}

/// Two lattice blocks, one three- and one four-dimensional, far apart in R⁴
/// and joined by a single edge.
#[test]
fn union_of_blocks_is_bimodal() {
    let mut coords = Vec::new();
    let mut interior = Vec::new();
    let side3 = 17i64;
    for a in 0..side3 {
        for b in 0..side3 {
            for c in 0..side3 {
                coords.extend([a as f64, b as f64, c as f64, 0.0]);
                let edge = [a, b, c].iter().any(|&v| v == 0 || v == side3 - 1);
                interior.push(!edge);
            }
        }
    }
    let n3 = interior.len();
    let side4 = 13i64;
    for a in 0..side4 {
        for b in 0..side4 {
            for c in 0..side4 {
                for d in 0..side4 {
                    coords.extend([a as f64 + 100.0, b as f64, c as f64, d as f64]);
                    let edge = [a, b, c, d].iter().any(|&v| v == 0 || v == side4 - 1);
                    interior.push(!edge);
                }
            }
        }
    }
    let n = interior.len();
    // Axis neighbours within each block, plus the bridge.
    let mut edges = vec![(289 + 17 + 1, n3 + 2197 + 169 + 13 + 1)];
    let strides3 = [289usize, 17, 1];
    for i in 0..n3 {
        let idx = [i / 289, i / 17 % 17, i % 17];
        for k in 0..3 {
            if idx[k] + 1 < 17 {
                edges.push((i, i + strides3[k]));
            }
        }
    }
    let strides4 = [2197usize, 169, 13, 1];
    for i in 0..n - n3 {
        for k in 0..4 {
            if i / strides4[k] % 13 + 1 < 13 {
                edges.push((n3 + i, n3 + i + strides4[k]));
            }
        }
    }
    let weights = vec![1.0; n];
    let s = build_cloud_space(4, coords, &weights, &edges, interior).unwrap();
    let c3 = (8 * 17 + 8) * 17 + 8;
    let c4 = n3 + ((6 * 13 + 6) * 13 + 6) * 13 + 6;
    let w = Window::new(1.5, 5.5).unwrap();
    let rep = estimate_dimensions(&s, &[c3, c4], w);
    assert!(rep.failures.is_empty(), "{:?}", rep.failures);
    assert_eq!(rep.points[0].k, 3);
    assert_eq!(rep.points[1].k, 4);
    assert_eq!(rep.histogram.get(&3), Some(&1));
    assert_eq!(rep.histogram.get(&4), Some(&1));
    let mut buf = Vec::new();
    write_dimension_csv(&mut buf, &rep).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("x,k,theta,residual\n"));
    assert_eq!(text.lines().count(), 3);
}
