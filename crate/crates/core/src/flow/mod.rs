//! Lagrangian flows of catalogue vector fields and the flow-regularity
//! diagnostics built on them.
//!
//! Flows act on ambient coordinates of a lattice space; trajectories are
//! classical RK4 solutions. Green values at off-lattice trajectory points
//! come from a [`GreenEvaluator`].

mod field;
mod kernel;
mod lusin;
mod verify;

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::space::MmSpace;
use crate::{Error, Result};

pub use field::{
    cell_average_g, field_derivatives, finite_difference_jacobian, jacobian_invariants, make_field,
    make_field_on_box, FieldKind, VectorFieldSpec,
};
pub use kernel::{
    ColumnInterpolator, GreenEvaluator, GreenSample, StationaryKernel, FLOOR_CELLS, MAX_DIM,
};
pub use lusin::{
    lambert_w, phi_functional, phi_star, verify_lusin_lipschitz, LusinLevel, LusinReport, PhiTable,
};
pub use verify::{
    verify_green_derivative, verify_rlf_axioms, verify_vector_maximal, CompressibilityReport,
    DerivativeReport, HistogramConfig, RlfReport, TestFunction, VectorMaximalFit, RIGID_TOLERANCE,
};

/// Recorded trajectories of a set of seeds.
#[derive(Debug, Clone, Serialize)]
pub struct FlowResult {
    pub seeds: Vec<usize>,
    pub dim: usize,
    pub t0: f64,
    pub dt: f64,
    /// `t0 + k dt` for every recorded step, the last one being the horizon.
    pub times: Vec<f64>,
    /// Seed-major, then time, then coordinate.
    pub positions: Vec<f64>,
    /// Trajectory left the domain box; such seeds are excluded from
    /// statistics and their position is frozen at the exit step.
    pub exited: Vec<bool>,
    /// Trajectory came within `dt ‖b‖_∞` of the singular set of the field.
    pub near_singular: Vec<bool>,
}

impl FlowResult {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }

    /// Position of seed number `i` at recorded step `k`.
    pub fn position(&self, i: usize, k: usize) -> &[f64] {
        let stride = self.times.len() * self.dim;
        &self.positions[i * stride + k * self.dim..i * stride + (k + 1) * self.dim]
    }

    /// Seed numbers that stayed in the domain.
    pub fn kept(&self) -> Vec<usize> {
        (0..self.seeds.len()).filter(|&i| !self.exited[i]).collect()
    }

    /// Map from point id to seed number.
    pub fn seed_lookup(&self) -> std::collections::HashMap<usize, usize> {
        self.seeds
            .iter()
            .enumerate()
            .map(|(i, &p)| (p, i))
            .collect()
    }
}

/// Largest admissible step: `min(0.1 / Lip, h / ‖b‖_∞)`.
pub fn max_step(spec: &VectorFieldSpec, h: f64) -> f64 {
    let lip = spec.lipschitz(h);
    let a = if lip > 0.0 { 0.1 / lip } else { f64::INFINITY };
    let b = if spec.sup_norm > 0.0 {
        h / spec.sup_norm
    } else {
        f64::INFINITY
    };
    a.min(b)
}

fn rk4_step(spec: &VectorFieldSpec, t: f64, dt: f64, x: &mut [f64], scratch: &mut [Vec<f64>; 5]) {
    let n = x.len();
    let [k1, k2, k3, k4, y] = scratch;
    spec.velocity(t, x, k1);
    for i in 0..n {
        y[i] = x[i] + 0.5 * dt * k1[i];
    }
    spec.velocity(t + 0.5 * dt, y, k2);
    for i in 0..n {
        y[i] = x[i] + 0.5 * dt * k2[i];
    }
    spec.velocity(t + 0.5 * dt, y, k3);
    for i in 0..n {
        y[i] = x[i] + dt * k3[i];
    }
    spec.velocity(t + dt, y, k4);
    for i in 0..n {
        x[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
}

fn scratch(n: usize) -> [Vec<f64>; 5] {
    std::array::from_fn(|_| vec![0.0; n])
}

fn inside(x: &[f64], w: f64) -> bool {
    x.iter().all(|c| c.abs() <= w * (1.0 + 1e-12))
}

/// Integrate the seeds from `t0` over `steps` RK4 steps of size `dt`
/// (negative `dt` runs backwards). Returns end points and exit flags;
/// points leaving `[-w, w]^n` stop there.
pub fn integrate_points(
    spec: &VectorFieldSpec,
    points: &[f64],
    t0: f64,
    dt: f64,
    steps: usize,
    w: f64,
) -> (Vec<f64>, Vec<bool>) {
    let n = spec.dim;
    let out: Vec<(Vec<f64>, bool)> = points
        .par_chunks_exact(n)
        .map(|p| {
            let mut x = p.to_vec();
            let mut s = scratch(n);
            for k in 0..steps {
                rk4_step(spec, t0 + k as f64 * dt, dt, &mut x, &mut s);
                if !inside(&x, w) {
                    return (x, true);
                }
            }
            (x, false)
        })
        .collect();
    let exited = out.iter().map(|o| o.1).collect();
    (out.into_iter().flat_map(|o| o.0).collect(), exited)
}

/// RK4 trajectories of lattice seeds over `[t0, t0 + horizon]`.
///
/// Without `dt` the largest admissible step (shrunk to divide the horizon)
/// is used; a larger `dt` is rejected.
pub fn integrate_rlf(
    space: &MmSpace,
    spec: &VectorFieldSpec,
    seeds: &[usize],
    t0: f64,
    horizon: f64,
    dt: Option<f64>,
) -> Result<FlowResult> {
    let l = space
        .lattice()
        .ok_or_else(|| Error::Precondition("flows need a lattice".into()))?;
    if l.dim != spec.dim {
        return Err(Error::InvalidParameter(format!(
            "{}-dimensional field on a {}-dimensional lattice",
            spec.dim, l.dim
        )));
    }
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidParameter(format!("horizon {horizon}")));
    }
    if let Some(&s) = seeds
        .iter()
        .find(|&&s| s >= space.len() || !space.is_interior(s))
    {
        return Err(Error::InvalidParameter(format!("seed {s} is not interior")));
    }
    let limit = max_step(spec, l.spacing);
    let steps = match dt {
        Some(dt) if !(dt > 0.0) || dt > limit * (1.0 + 1e-12) => {
            return Err(Error::InvalidParameter(format!(
                "step {dt} exceeds the admissible {limit}"
            )))
        }
        Some(dt) => (horizon / dt - 1e-9).ceil().max(1.0) as usize,
        None if limit.is_finite() => (horizon / limit - 1e-9).ceil().max(1.0) as usize,
        None => 1,
    };
    let dt = horizon / steps as f64;
    let n = spec.dim;
    let w = l.half_width();
    let guard = dt * spec.sup_norm;
    let per: Vec<(Vec<f64>, bool, bool)> = seeds
        .par_iter()
        .map(|&s| {
            let mut x = vec![0.0; n];
            l.coords_into(s, &mut x);
            let mut path = Vec::with_capacity((steps + 1) * n);
            path.extend_from_slice(&x);
            let mut sc = scratch(n);
            let mut exited = false;
            let mut flagged = spec.singular_distance(&x) < guard;
            for k in 0..steps {
                if !exited {
                    let prev = x.clone();
                    rk4_step(spec, t0 + k as f64 * dt, dt, &mut x, &mut sc);
                    if !inside(&x, w) {
                        exited = true;
                        x = prev;
                    }
                    flagged |= spec.singular_distance(&x) < guard;
                }
                path.extend_from_slice(&x);
            }
            (path, exited, flagged)
        })
        .collect();
    let mut positions = Vec::with_capacity(seeds.len() * (steps + 1) * n);
    let mut exited = Vec::with_capacity(seeds.len());
    let mut near_singular = Vec::with_capacity(seeds.len());
    for (p, e, f) in per {
        positions.extend(p);
        exited.push(e);
        near_singular.push(f);
    }
    Ok(FlowResult {
        seeds: seeds.to_vec(),
        dim: n,
        t0,
        dt,
        times: (0..=steps).map(|k| t0 + k as f64 * dt).collect(),
        positions,
        exited,
        near_singular,
    })
}

/// Observed order `log₂(|X_dt - X_{dt/2}| / |X_{dt/2} - X_{dt/4}|)` of the
/// end points (maximum norm over points).
pub fn convergence_order(
    spec: &VectorFieldSpec,
    points: &[f64],
    horizon: f64,
    steps: usize,
) -> f64 {
    let w = f64::INFINITY;
    let run = |k: usize| integrate_points(spec, points, 0.0, horizon / k as f64, k, w).0;
    let (a, b, c) = (run(steps), run(2 * steps), run(4 * steps));
    let diff = |u: &[f64], v: &[f64]| {
        u.iter()
            .zip(v)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max)
    };
    (diff(&a, &b) / diff(&b, &c)).log2()
}

/// Largest distance from the start after running forward over `horizon`
/// and back again.
pub fn reversibility_error(
    spec: &VectorFieldSpec,
    points: &[f64],
    horizon: f64,
    steps: usize,
) -> f64 {
    let dt = horizon / steps as f64;
    let w = f64::INFINITY;
    let (fwd, _) = integrate_points(spec, points, 0.0, dt, steps, w);
    let (back, _) = integrate_points(spec, &fwd, horizon, -dt, steps, w);
    back.iter()
        .zip(points)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct ProductReport {
    /// `max |X^Z_t(x, y) - (X^X_t(x), X^Y_t(y))|` over pairs and steps.
    pub deviation: f64,
    /// `max | |b^Z|² - |b^X|² - |b^Y|² |` over the sampled pairs.
    pub pythagoras: f64,
    pub pairs: usize,
}

/// Compare the flow of the product field with the pair of factor flows on
/// every combination of the factor seeds (flat ambient coordinates).
pub fn product_flow_check(
    spec_x: &VectorFieldSpec,
    spec_y: &VectorFieldSpec,
    seeds_x: &[f64],
    seeds_y: &[f64],
    horizon: f64,
    steps: usize,
) -> Result<ProductReport> {
    let (nx, ny) = (spec_x.dim, spec_y.dim);
    if seeds_x.len() % nx != 0
        || seeds_y.len() % ny != 0
        || seeds_x.is_empty()
        || seeds_y.is_empty()
    {
        return Err(Error::InvalidParameter(
            "seed coordinates do not match dimensions".into(),
        ));
    }
    let z = VectorFieldSpec::product(spec_x.clone(), spec_y.clone());
    let dt = horizon / steps as f64;
    let mut joint = Vec::new();
    for a in seeds_x.chunks_exact(nx) {
        for b in seeds_y.chunks_exact(ny) {
            joint.extend_from_slice(a);
            joint.extend_from_slice(b);
        }
    }
    let pairs = joint.len() / (nx + ny);
    let (mut deviation, mut pythagoras) = (0.0f64, 0.0f64);
    let (mut px, mut py, mut pz) = (seeds_x.to_vec(), seeds_y.to_vec(), joint);
    let (mut bx, mut by, mut bz) = (vec![0.0; nx], vec![0.0; ny], vec![0.0; nx + ny]);
    let inf = f64::INFINITY;
    for k in 0..steps {
        let t = k as f64 * dt;
        for p in pz.chunks_exact(nx + ny) {
            z.velocity(t, p, &mut bz);
            spec_x.velocity(t, &p[..nx], &mut bx);
            spec_y.velocity(t, &p[nx..], &mut by);
            let sq = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>();
            pythagoras = pythagoras.max((sq(&bz) - sq(&bx) - sq(&by)).abs());
        }
        px = integrate_points(spec_x, &px, t, dt, 1, inf).0;
        py = integrate_points(spec_y, &py, t, dt, 1, inf).0;
        pz = integrate_points(&z, &pz, t, dt, 1, inf).0;
        let mut j = 0;
        for a in px.chunks_exact(nx) {
            for b in py.chunks_exact(ny) {
                let p = &pz[j * (nx + ny)..(j + 1) * (nx + ny)];
                let d = p[..nx]
                    .iter()
                    .zip(a)
                    .chain(p[nx..].iter().zip(b))
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum::<f64>()
                    .sqrt();
                deviation = deviation.max(d);
                j += 1;
            }
        }
    }
    Ok(ProductReport {
        deviation,
        pythagoras,
        pairs,
    })
}

/// Trajectory dump with columns `seed, t, x0, …`.
pub fn write_trajectories_csv<W: Write>(out: W, result: &FlowResult) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["seed".to_string(), "t".to_string()];
    header.extend((0..result.dim).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for (i, &s) in result.seeds.iter().enumerate() {
        for (k, &t) in result.times.iter().enumerate() {
            let mut rec = vec![s.to_string(), format!("{t:e}")];
            rec.extend(result.position(i, k).iter().map(|c| format!("{c:e}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{build_grid_space, MeasureLaw};

    fn r3() -> MmSpace {
        build_grid_space(3, 21, 0.1, MeasureLaw::Lebesgue).unwrap()
    }

    #[test]
    fn constant_field_is_exact() {
        let s = r3();
        let v = vec![0.3, -0.1, 0.2];
        let f = make_field(
            FieldKind::Constant {
                velocity: v.clone(),
            },
            &s,
        )
        .unwrap();
        let seeds = s.core_points();
        let r = integrate_rlf(&s, &f, &seeds[..50], 0.0, 1.0, None).unwrap();
        for i in 0..50 {
            let x0 = s.coords(seeds[i]).unwrap();
            for (k, &t) in r.times.iter().enumerate() {
                if r.exited[i] {
                    continue;
                }
                for c in 0..3 {
                    assert!((r.position(i, k)[c] - (x0[c] + t * v[c])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rotation_preserves_distances() {
        let s = r3();
        let f = make_field(
            FieldKind::Rotation {
                omega: 1.0,
                plane: [0, 1],
            },
            &s,
        )
        .unwrap();
        let seeds: Vec<usize> = s.core_points().into_iter().step_by(37).collect();
        let r = integrate_rlf(&s, &f, &seeds, 0.0, 1.0, None).unwrap();
        assert!(r.exited.iter().all(|e| !e));
        let last = r.steps();
        for i in 0..seeds.len() {
            for j in 0..i {
                let d0 = s.dist(seeds[i], seeds[j]);
                let a = r.position(i, last);
                let b = r.position(j, last);
                let d1 = a
                    .iter()
                    .zip(b)
                    .map(|(u, v)| (u - v) * (u - v))
                    .sum::<f64>()
                    .sqrt();
                assert!((d1 - d0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn shear_trajectories_respect_the_speed_bound() {
        let s = r3();
        let f = make_field(
            FieldKind::Shear {
                alpha: 0.7,
                amplitude: 1.0,
                along: 0,
                across: 1,
            },
            &s,
        )
        .unwrap();
        let seeds = s.core_points();
        let r = integrate_rlf(&s, &f, &seeds, 0.0, 0.3, None).unwrap();
        for i in r.kept() {
            for k in 1..r.times.len() {
                let d: f64 = r
                    .position(i, k)
                    .iter()
                    .zip(r.position(i, k - 1))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                assert!(d <= f.sup_norm * r.dt * (1.0 + 1e-12));
            }
        }
        // Seeds on the singular plane are flagged.
        let l = s.lattice().unwrap();
        let c = seeds.iter().position(|&p| p == l.centre_index()).unwrap();
        assert!(r.near_singular[c]);
    }

    #[test]
    fn oversized_steps_are_rejected() {
        let s = r3();
        let f = make_field(
            FieldKind::Rotation {
                omega: 1.0,
                plane: [0, 1],
            },
            &s,
        )
        .unwrap();
        assert!(integrate_rlf(&s, &f, &[s.centre()], 0.0, 1.0, Some(0.5)).is_err());
    }

    #[test]
    fn rk4_order_and_reversibility() {
        let s = r3();
        let f = make_field(
            FieldKind::Radial {
                rate: 1.0,
                inner: 0.6,
                outer: 0.75,
            },
            &s,
        )
        .unwrap();
        let g = make_field(
            FieldKind::Rotation {
                omega: 2.0,
                plane: [1, 2],
            },
            &s,
        )
        .unwrap();
        let pts = [0.1, 0.05, -0.1, -0.2, 0.1, 0.05];
        assert!(convergence_order(&f, &pts, 0.5, 4) >= 3.5);
        assert!(convergence_order(&g, &pts, 1.0, 8) >= 3.5);
        assert!(reversibility_error(&g, &pts, 1.0, 100) < 1e-6);
        assert!(reversibility_error(&f, &pts, 0.5, 100) < 1e-6);
    }

    #[test]
    fn product_of_rotation_and_constant() {
        let rot = make_field_on_box(
            FieldKind::Rotation {
                omega: 1.0,
                plane: [0, 1],
            },
            2,
            1.0,
        )
        .unwrap();
        let c = make_field_on_box(
            FieldKind::Constant {
                velocity: vec![0.4],
            },
            1,
            1.0,
        )
        .unwrap();
        let rep =
            product_flow_check(&rot, &c, &[0.3, 0.1, -0.2, 0.5], &[0.0, 0.2], 1.0, 100).unwrap();
        assert!(rep.deviation <= 1e-8, "{rep:?}");
        assert!(rep.pythagoras < 1e-14);
        assert_eq!(rep.pairs, 4);
    }

    #[test]
    fn trajectory_csv_layout() {
        let s = r3();
        let f = make_field(
            FieldKind::Constant {
                velocity: vec![0.1, 0.0, 0.0],
            },
            &s,
        )
        .unwrap();
        let r = integrate_rlf(&s, &f, &[s.centre()], 0.0, 0.5, None).unwrap();
        let mut buf = Vec::new();
        write_trajectories_csv(&mut buf, &r).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("seed,t,x0,x1,x2\n"));
        assert_eq!(text.lines().count(), 1 + r.times.len());
    }
}
