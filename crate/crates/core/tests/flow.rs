use greenlab::flow::{
    convergence_order, field_derivatives, finite_difference_jacobian, integrate_rlf, make_field,
    make_field_on_box, product_flow_check, reversibility_error, FieldKind,
};
use greenlab::sampling::{rng, subsample};
use greenlab::space::{build_grid_space, MeasureLaw};
use proptest::prelude::*;

fn rotation() -> FieldKind {
    FieldKind::Rotation {
        omega: 1.0,
        plane: [0, 1],
    }
}

fn shear(alpha: f64) -> FieldKind {
    FieldKind::Shear {
        alpha,
        amplitude: 1.0,
        along: 0,
        across: 1,
    }
}

#[test]
fn catalogue_derivatives() {
    let rot = make_field_on_box(rotation(), 3, 1.0).unwrap();
    assert_eq!(field_derivatives(&rot, 0.0, &[0.3, -0.2, 0.1]), (0.0, 0.0));

    let radial = FieldKind::Radial {
        rate: 1.0,
        inner: 0.5,
        outer: 0.8,
    };
    let id = make_field_on_box(radial, 3, 1.0).unwrap();
    let (div, hs) = field_derivatives(&id, 0.0, &[0.1, 0.2, -0.1]);
    assert!((div - 3.0).abs() < 1e-12);
    assert!((hs - 3f64.sqrt()).abs() < 1e-12);

    let sh = make_field_on_box(shear(0.7), 3, 1.0).unwrap();
    let x = [0.2, 0.5, 0.0];
    let (div, hs) = field_derivatives(&sh, 0.0, &x);
    assert_eq!(div, 0.0);
    assert!((hs - 0.7 * 0.5f64.powf(-0.3) / 2f64.sqrt()).abs() < 1e-12);
    let fd = finite_difference_jacobian(&sh, 0.0, &x, 1e-6);
    for (a, b) in fd.iter().zip(sh.jacobian(0.0, &x)) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn shear_exponent_outside_the_sobolev_range_is_rejected() {
    assert!(make_field_on_box(shear(0.4), 3, 1.0).is_err());
    assert!(make_field_on_box(shear(1.0), 3, 1.0).is_err());
}

#[test]
fn radial_support_must_fit_the_core() {
    let s = build_grid_space(3, 21, 0.1, MeasureLaw::Lebesgue).unwrap();
    let too_wide = FieldKind::Radial {
        rate: 1.0,
        inner: 0.2,
        outer: 0.95,
    };
    assert!(make_field(too_wide, &s).is_err());
}

#[test]
fn constant_field_translates_exactly() {
    let s = build_grid_space(3, 21, 0.1, MeasureLaw::Lebesgue).unwrap();
    let v = vec![0.3, -0.1, 0.2];
    let spec = make_field(
        FieldKind::Constant {
            velocity: v.clone(),
        },
        &s,
    )
    .unwrap();
    let seeds = subsample(&s.core_points(), 20, &mut rng(1));
    let res = integrate_rlf(&s, &spec, &seeds, 0.0, 0.5, None).unwrap();
    for (i, &p) in seeds.iter().enumerate() {
        let x = s.coords(p).unwrap();
        for k in 0..=res.steps() {
            let t = res.times[k];
            for c in 0..3 {
                assert!((res.position(i, k)[c] - x[c] - t * v[c]).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn rotation_is_an_isometry() {
    let s = build_grid_space(3, 21, 0.1, MeasureLaw::Lebesgue).unwrap();
    let spec = make_field(rotation(), &s).unwrap();
    let seeds = subsample(&s.core_points(), 30, &mut rng(2));
    let res = integrate_rlf(&s, &spec, &seeds, 0.0, 1.0, None).unwrap();
    let k = res.steps();
    for i in res.kept() {
        for j in res.kept() {
            let d = |k: usize| {
                let (a, b) = (res.position(i, k), res.position(j, k));
                a.iter()
                    .zip(b)
                    .map(|(u, v)| (u - v).powi(2))
                    .sum::<f64>()
                    .sqrt()
            };
            assert!((d(k) - d(0)).abs() < 1e-6);
        }
    }
}

#[test]
fn shear_trajectories_respect_the_speed_bound() {
    let s = build_grid_space(3, 21, 0.1, MeasureLaw::Lebesgue).unwrap();
    let spec = make_field(shear(0.7), &s).unwrap();
    let seeds = subsample(&s.core_points(), 30, &mut rng(3));
    let res = integrate_rlf(&s, &spec, &seeds, 0.0, 0.5, None).unwrap();
    for i in res.kept() {
        for k in 0..res.steps() {
            let (a, b) = (res.position(i, k), res.position(i, k + 1));
            let step = a
                .iter()
                .zip(b)
                .map(|(u, v)| (u - v).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(step <= spec.sup_norm * res.dt * (1.0 + 1e-12));
        }
    }
}

#[test]
fn rk4_order_and_reversibility() {
    let spec = make_field_on_box(rotation(), 3, 1.0).unwrap();
    let points = [0.3, 0.1, 0.2, -0.4, 0.2, 0.0];
    assert!(convergence_order(&spec, &points, 1.0, 8) >= 3.5);
    assert!(reversibility_error(&spec, &points, 1.0, 100) < 1e-6);
}

#[test]
fn product_flows_split() {
    let cx = make_field_on_box(
        FieldKind::Constant {
            velocity: vec![0.2, 0.1],
        },
        2,
        1.0,
    )
    .unwrap();
    let cy = make_field_on_box(
        FieldKind::Constant {
            velocity: vec![-0.3],
        },
        1,
        1.0,
    )
    .unwrap();
    let rep = product_flow_check(&cx, &cy, &[0.1, 0.2, -0.3, 0.0], &[0.5, 0.1], 1.0, 50).unwrap();
    assert_eq!(rep.deviation, 0.0);
    assert_eq!(rep.pairs, 4);

    let rot = make_field_on_box(rotation(), 2, 1.0).unwrap();
    let rep = product_flow_check(&rot, &cy, &[0.1, 0.2, -0.3, 0.0], &[0.5, 0.1], 1.0, 200).unwrap();
    assert!(rep.deviation <= 1e-8);
    assert!(rep.pythagoras <= 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn velocity_is_bounded_by_the_declared_norm(
        x in prop::array::uniform3(-1.0f64..1.0),
        alpha in 0.51f64..0.99,
        t in 0.0f64..1.0,
    ) {
        let mut b = [0.0; 3];
        for kind in [rotation(), shear(alpha)] {
            let spec = make_field_on_box(kind, 3, 1.0).unwrap();
            spec.velocity(t, &x, &mut b);
            let speed = b.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(speed <= spec.sup_norm * (1.0 + 1e-12));
        }
    }

    #[test]
    fn rotation_jacobian_is_antisymmetric(x in prop::array::uniform3(-1.0f64..1.0)) {
        let spec = make_field_on_box(rotation(), 3, 1.0).unwrap();
        let (div, hs) = field_derivatives(&spec, 0.0, &x);
        prop_assert_eq!(div, 0.0);
        prop_assert_eq!(hs, 0.0);
    }
}
