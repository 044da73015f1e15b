//! Flow axioms, the coupled derivative of `G` along trajectories, and the
//! vector-valued maximal estimate.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::field::{cell_average_g, field_derivatives, VectorFieldSpec};
use super::kernel::GreenEvaluator;
use super::{integrate_points, FlowResult};
use crate::linalg::median;
use crate::maximal::{hardy_littlewood, MaximalRow, RadiusSearch};
use crate::sampling;
use crate::space::MmSpace;
use crate::{Error, Result};

/// Smooth test functions for the weak flow equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TestFunction {
    Coordinate(usize),
    /// `exp(-|x - c|² / w²)`.
    Bump {
        centre: Vec<f64>,
        width: f64,
    },
}

impl TestFunction {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            TestFunction::Coordinate(k) => x[*k],
            TestFunction::Bump { centre, width } => {
                let d2: f64 = x.iter().zip(centre).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (width * width)).exp()
            }
        }
    }

    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            TestFunction::Coordinate(k) => {
                out.fill(0.0);
                out[*k] = 1.0;
            }
            TestFunction::Bump { centre, width } => {
                let v = self.value(x);
                for i in 0..x.len() {
                    out[i] = -2.0 * (x[i] - centre[i]) / (width * width) * v;
                }
            }
        }
    }

    /// Coordinate functions plus a few bumps inside `[-w, w]^n`.
    pub fn standard_set(n: usize, w: f64) -> Vec<TestFunction> {
        let mut v: Vec<TestFunction> = (0..n).map(TestFunction::Coordinate).collect();
        for s in [-0.3, 0.0, 0.3] {
            v.push(TestFunction::Bump {
                centre: (0..n)
                    .map(|k| s * w * if k % 2 == 0 { 1.0 } else { -1.0 })
                    .collect(),
                width: 0.4 * w,
            });
        }
        v
    }
}

/// Cell-histogram settings for the compressibility estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    /// Histogram cells per axis over the bounding box of the pushed samples.
    pub bins: usize,
    /// Jittered samples per axis inside each lattice cell.
    pub samples_per_axis: usize,
    /// Cells with fewer samples are ignored.
    pub n_min: usize,
    pub seed: u64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            bins: 16,
            samples_per_axis: 8,
            n_min: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CompressibilityReport {
    /// Largest density of `(X_T)_# m` relative to `m` over used cells.
    pub l: f64,
    /// Smallest such density.
    pub l_min: f64,
    /// Density of the used cell containing the image of the origin.
    pub centre_ratio: Option<f64>,
    pub bins: usize,
    /// The requested binning starved every cell and was coarsened.
    pub coarsened: bool,
    pub cells_used: usize,
    pub samples: usize,
    pub samples_exited: usize,
    /// `max exp(-∫ div b)` along the recorded trajectories.
    pub liouville_max: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RlfReport {
    /// `max |d/dt f(X_t) - b_t · ∇f(X_t)|` with centred time differences.
    pub condition3_residual: f64,
    /// The residual divided by `max |b · ∇f|` (0 when that vanishes).
    pub condition3_relative: f64,
    pub compressibility: CompressibilityReport,
    pub seeds_used: usize,
    pub seeds_exited: usize,
    pub seeds_near_singular: usize,
}

/// Check the weak flow equation along `result` and estimate the
/// compressibility constant by pushing forward jittered samples of `m`
/// restricted to the cells of the seeds.
pub fn verify_rlf_axioms(
    space: &MmSpace,
    spec: &VectorFieldSpec,
    result: &FlowResult,
    tests: &[TestFunction],
    hist: HistogramConfig,
) -> Result<RlfReport> {
    if result.steps() < 2 {
        return Err(Error::InvalidParameter("need at least two steps".into()));
    }
    let n = result.dim;
    let kept = result.kept();
    let dt = result.dt;
    let per: Vec<(f64, f64)> = kept
        .par_iter()
        .map(|&i| {
            let (mut res, mut scale) = (0.0f64, 0.0f64);
            let mut b = vec![0.0; n];
            let mut g = vec![0.0; n];
            let mut v = vec![0.0; n];
            for k in 1..result.steps() {
                let x = result.position(i, k);
                spec.velocity(result.times[k], x, &mut b);
                // Chain rule with the centred trajectory velocity: exact on
                // straight-line motion whatever the test function.
                let (next, prev) = (result.position(i, k + 1), result.position(i, k - 1));
                for c in 0..n {
                    v[c] = (next[c] - prev[c]) / (2.0 * dt);
                }
                for f in tests {
                    f.gradient(x, &mut g);
                    let fd: f64 = v.iter().zip(&g).map(|(u, w)| u * w).sum();
                    let rhs: f64 = b.iter().zip(&g).map(|(u, v)| u * v).sum();
                    res = res.max((fd - rhs).abs());
                    scale = scale.max(rhs.abs());
                }
            }
            (res, scale)
        })
        .collect();
    let res = per.iter().map(|p| p.0).fold(0.0, f64::max);
    let scale = per.iter().map(|p| p.1).fold(0.0, f64::max);
    let compressibility = compressibility(space, spec, result, hist)?;
    Ok(RlfReport {
        condition3_residual: res,
        condition3_relative: if scale > 0.0 { res / scale } else { 0.0 },
        compressibility,
        seeds_used: kept.len(),
        seeds_exited: result.seeds.len() - kept.len(),
        seeds_near_singular: result.near_singular.iter().filter(|f| **f).count(),
    })
}

fn compressibility(
    space: &MmSpace,
    spec: &VectorFieldSpec,
    result: &FlowResult,
    hist: HistogramConfig,
) -> Result<CompressibilityReport> {
    let l = space
        .lattice()
        .ok_or_else(|| Error::Precondition("compressibility needs a lattice".into()))?;
    if hist.bins == 0 || hist.samples_per_axis == 0 {
        return Err(Error::InvalidParameter(
            "empty histogram configuration".into(),
        ));
    }
    let n = l.dim;
    let h = l.spacing;
    let k = hist.samples_per_axis;
    let per_cell = k.pow(n as u32);
    let mut rng = sampling::rng(hist.seed);
    let mut samples = Vec::with_capacity(result.seeds.len() * per_cell * n);
    let mut mass = Vec::with_capacity(result.seeds.len() * per_cell);
    let mut x = vec![0.0; n];
    for &s in &result.seeds {
        l.coords_into(s, &mut x);
        let m = space.weight(s) / per_cell as f64;
        for mut c in 0..per_cell {
            for &xc in &x {
                let j = c % k;
                c /= k;
                let u = (j as f64 + rng.gen::<f64>()) / k as f64 - 0.5;
                samples.push(xc + u * h);
            }
            mass.push(m);
        }
    }
    let (pushed, exited) = integrate_points(
        spec,
        &samples,
        result.t0,
        result.dt,
        result.steps(),
        l.half_width() + h / 2.0,
    );
    let kept: Vec<usize> = (0..mass.len()).filter(|&i| !exited[i]).collect();
    let density = space.cell_mass().expect("lattice") / h.powi(n as i32);
    let mut lo = vec![f64::INFINITY; n];
    let mut hi = vec![f64::NEG_INFINITY; n];
    for &i in &kept {
        for c in 0..n {
            lo[c] = lo[c].min(pushed[i * n + c]);
            hi[c] = hi[c].max(pushed[i * n + c]);
        }
    }
    let origin = vec![0.0; n];
    let image_of_origin = integrate_points(
        spec,
        &origin,
        result.t0,
        result.dt,
        result.steps(),
        f64::INFINITY,
    )
    .0;
    let mut bins = hist.bins;
    let mut coarsened = false;
    loop {
        let width: Vec<f64> = (0..n)
            .map(|c| ((hi[c] - lo[c]) / bins as f64).max(f64::MIN_POSITIVE))
            .collect();
        let cell_of = |p: &[f64]| -> usize {
            let mut idx = 0;
            for c in (0..n).rev() {
                let b = (((p[c] - lo[c]) / width[c]) as usize).min(bins - 1);
                idx = idx * bins + b;
            }
            idx
        };
        let cells = bins.pow(n as u32);
        let mut count = vec![0usize; cells];
        let mut pm = vec![0.0; cells];
        for &i in &kept {
            let j = cell_of(&pushed[i * n..(i + 1) * n]);
            count[j] += 1;
            pm[j] += mass[i];
        }
        let reference = density * width.iter().product::<f64>();
        let used: Vec<usize> = (0..cells).filter(|&j| count[j] >= hist.n_min).collect();
        if used.is_empty() && bins > 1 {
            bins /= 2;
            coarsened = true;
            continue;
        }
        if used.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "fewer than {} samples in total",
                hist.n_min
            )));
        }
        let ratios: Vec<f64> = used.iter().map(|&j| pm[j] / reference).collect();
        let in_box = (0..n).all(|c| image_of_origin[c] >= lo[c] && image_of_origin[c] <= hi[c]);
        let centre_ratio = if in_box {
            let j = cell_of(&image_of_origin);
            (count[j] >= hist.n_min).then(|| pm[j] / reference)
        } else {
            None
        };
        return Ok(CompressibilityReport {
            l: ratios.iter().copied().fold(0.0, f64::max),
            l_min: ratios.iter().copied().fold(f64::INFINITY, f64::min),
            centre_ratio,
            bins,
            coarsened,
            cells_used: used.len(),
            samples: mass.len(),
            samples_exited: mass.len() - kept.len(),
            liouville_max: liouville_max(spec, result),
        });
    }
}

/// `max exp(-∫ div b)` over the kept trajectories (trapezoid rule).
fn liouville_max(spec: &VectorFieldSpec, result: &FlowResult) -> f64 {
    result
        .kept()
        .par_iter()
        .map(|&i| {
            let mut acc = 0.0;
            let mut prev = field_derivatives(spec, result.times[0], result.position(i, 0)).0;
            for k in 1..result.times.len() {
                let cur = field_derivatives(spec, result.times[k], result.position(i, k)).0;
                acc += 0.5 * (prev + cur) * result.dt;
                prev = cur;
            }
            (-acc).exp()
        })
        .reduce(|| 0.0, f64::max)
}

#[derive(Debug, Clone, Serialize)]
pub struct DerivativeReport {
    /// `max |ΔG/Δt - formula| / (G (Mg(x) + Mg(y)))` over pairs with a
    /// positive scale.
    pub relative_max: f64,
    pub relative_median: f64,
    /// `max |ΔG/Δt - formula|`.
    pub absolute_max: f64,
    /// `max |formula|`, for context when the Gronwall scale vanishes.
    pub formula_max: f64,
    pub evaluations: usize,
    /// Pairs below the resolution floor or with an exited trajectory.
    pub excluded: usize,
}

/// Compare centred time differences of `G(X_t(x), X_t(y))` with
/// `b(X_t x) · ∇_x G + b(X_t y) · ∇_y G` along the recorded trajectories.
/// `pairs` are seed numbers of `result`; `mg` holds `Mg` on all points of
/// the space and is read at the lattice point nearest to each trajectory
/// point. Every `stride`-th interior step is checked.
pub fn verify_green_derivative(
    space: &MmSpace,
    spec: &VectorFieldSpec,
    result: &FlowResult,
    eval: &dyn GreenEvaluator,
    mg: &[f64],
    pairs: &[(usize, usize)],
    stride: usize,
) -> Result<DerivativeReport> {
    if result.steps() < 2 || stride == 0 {
        return Err(Error::InvalidParameter(
            "need two steps and a positive stride".into(),
        ));
    }
    if mg.len() != space.len() {
        return Err(Error::InvalidParameter("Mg must cover every point".into()));
    }
    let n = result.dim;
    let floor = eval.floor();
    let dist = |a: &[f64], b: &[f64]| {
        a.iter()
            .zip(b)
            .map(|(u, v)| (u - v) * (u - v))
            .sum::<f64>()
            .sqrt()
    };
    type Row = (Vec<f64>, f64, f64, usize, usize);
    let rows: Vec<Result<Row>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            if result.exited[i] || result.exited[j] {
                return Ok((Vec::new(), 0.0, 0.0, 0, 1));
            }
            let (mut rel, mut abs, mut fmax, mut evals, mut excl) =
                (Vec::new(), 0.0f64, 0.0f64, 0usize, 0usize);
            let (mut bp, mut bq) = (vec![0.0; n], vec![0.0; n]);
            let mut k = 1;
            while k < result.steps() {
                let (p, q) = (result.position(i, k), result.position(j, k));
                let near = [k - 1, k, k + 1]
                    .iter()
                    .any(|&s| dist(result.position(i, s), result.position(j, s)) < floor);
                if near {
                    excl += 1;
                    k += stride;
                    continue;
                }
                let gp = eval.value(result.position(i, k + 1), result.position(j, k + 1))?;
                let gm = eval.value(result.position(i, k - 1), result.position(j, k - 1))?;
                let fd = (gp - gm) / (2.0 * result.dt);
                let s = eval.sample(p, q)?;
                spec.velocity(result.times[k], p, &mut bp);
                spec.velocity(result.times[k], q, &mut bq);
                let formula: f64 = (0..n)
                    .map(|c| bp[c] * s.grad_p[c] + bq[c] * s.grad_q[c])
                    .sum();
                let mx = space.nearest_point(p).expect("lattice");
                let my = space.nearest_point(q).expect("lattice");
                let scale = s.value * (mg[mx] + mg[my]);
                let err = (fd - formula).abs();
                abs = abs.max(err);
                fmax = fmax.max(formula.abs());
                if scale > 0.0 {
                    rel.push(err / scale);
                }
                evals += 1;
                k += stride;
            }
            Ok((rel, abs, fmax, evals, excl))
        })
        .collect();
    let mut all_rel = Vec::new();
    let (mut abs, mut fmax, mut evals, mut excl) = (0.0f64, 0.0f64, 0, 0);
    for r in rows {
        let (rel, a, f, e, x) = r?;
        all_rel.extend(rel);
        abs = abs.max(a);
        fmax = fmax.max(f);
        evals += e;
        excl += x;
    }
    if evals == 0 {
        return Err(Error::InvalidParameter(
            "no pair above the resolution floor".into(),
        ));
    }
    Ok(DerivativeReport {
        relative_max: all_rel.iter().copied().fold(0.0, f64::max),
        relative_median: if all_rel.is_empty() {
            0.0
        } else {
            median(&all_rel)
        },
        absolute_max: abs,
        formula_max: fmax,
        evaluations: evals,
        excluded: excl,
    })
}

/// Relative size of the left-hand side tolerated for fields with `g ≡ 0`,
/// measured against `|b(x)| |∇_x G| + |b(y)| |∇_y G|`. It absorbs the lattice
/// anisotropy of the interpolated Green function.
pub const RIGID_TOLERANCE: f64 = 1e-2;

#[derive(Debug, Clone, Serialize)]
pub struct VectorMaximalFit {
    /// `max LHS / RHS`; 0 for rigid fields.
    pub cm: f64,
    pub rows: Vec<MaximalRow>,
    /// Pairs with vanishing right-hand side.
    pub skipped: Vec<(usize, usize)>,
    pub rigid: bool,
    /// `max LHS / (|b(x)| |∇_x G| + |b(y)| |∇_y G|)` over all pairs.
    pub normalized_lhs: f64,
    /// Pairs closer than the resolution floor.
    pub excluded: Vec<(usize, usize)>,
}

/// Fit `C_M^vec` in `|b·∇G_x(y) + b·∇G_y(x)| ≤ C G(x,y) (Mg(x) + Mg(y))` with
/// `g = |∇_sym b| + |div b|` (cell averages) at time `t`. For `g ≡ 0` the
/// left-hand side must vanish up to [`RIGID_TOLERANCE`]; otherwise the fit
/// fails with [`Error::RigidViolation`].
pub fn verify_vector_maximal(
    space: &MmSpace,
    spec: &VectorFieldSpec,
    eval: &dyn GreenEvaluator,
    pairs: &[(usize, usize)],
    t: f64,
    search: RadiusSearch,
) -> Result<VectorMaximalFit> {
    let g = cell_average_g(spec, space, t)?;
    let rigid = g.iter().all(|&v| v == 0.0);
    let mut points: Vec<usize> = pairs.iter().flat_map(|&(x, y)| [x, y]).collect();
    points.sort_unstable();
    points.dedup();
    let mg = if rigid {
        vec![0.0; points.len()]
    } else {
        hardy_littlewood(space, &g, &points, search)?
    };
    let mg_at = |p: usize| mg[points.binary_search(&p).expect("listed")];
    let n = spec.dim;
    let floor = eval.floor();
    let mut fit = VectorMaximalFit {
        cm: 0.0,
        rows: Vec::new(),
        skipped: Vec::new(),
        rigid,
        normalized_lhs: 0.0,
        excluded: Vec::new(),
    };
    let (mut bp, mut bq) = (vec![0.0; n], vec![0.0; n]);
    let norm = |v: &[f64]| v.iter().map(|c| c * c).sum::<f64>().sqrt();
    for &(x, y) in pairs {
        if space.dist(x, y) < floor {
            fit.excluded.push((x, y));
            continue;
        }
        let (p, q) = (
            space.coords(x).expect("lattice"),
            space.coords(y).expect("lattice"),
        );
        let s = eval.sample(&p, &q)?;
        spec.velocity(t, &p, &mut bp);
        spec.velocity(t, &q, &mut bq);
        let lhs = (0..n)
            .map(|c| bp[c] * s.grad_p[c] + bq[c] * s.grad_q[c])
            .sum::<f64>()
            .abs();
        let scale = norm(&bp) * norm(&s.grad_p) + norm(&bq) * norm(&s.grad_q);
        let normalized = if scale > 0.0 { lhs / scale } else { 0.0 };
        fit.normalized_lhs = fit.normalized_lhs.max(normalized);
        if rigid {
            if normalized > RIGID_TOLERANCE {
                return Err(Error::RigidViolation(format!(
                    "pair ({x}, {y}): |LHS| = {lhs:e} is {normalized:.3e} of its scale with g ≡ 0"
                )));
            }
            continue;
        }
        let rhs = s.value * (mg_at(x) + mg_at(y));
        if rhs > 0.0 {
            let ratio = lhs / rhs;
            fit.cm = fit.cm.max(ratio);
            fit.rows.push(MaximalRow {
                x,
                y,
                lhs,
                rhs,
                ratio,
            });
        } else {
            fit.skipped.push((x, y));
        }
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{integrate_rlf, make_field, FieldKind, StationaryKernel};
    use crate::space::{build_grid_space, MeasureLaw};

    fn r3() -> MmSpace {
        build_grid_space(3, 21, 0.1, MeasureLaw::Lebesgue).unwrap()
    }

    fn rotation(s: &MmSpace) -> VectorFieldSpec {
        make_field(
            FieldKind::Rotation {
                omega: 1.0,
                plane: [0, 1],
            },
            s,
        )
        .unwrap()
    }

    #[test]
    fn constant_field_satisfies_the_flow_equation_exactly() {
        let s = r3();
        let f = make_field(
            FieldKind::Constant {
                velocity: vec![0.2, 0.1, -0.1],
            },
            &s,
        )
        .unwrap();
        let r = integrate_rlf(&s, &f, &s.core_points(), 0.0, 0.5, Some(0.05)).unwrap();
        let rep = verify_rlf_axioms(
            &s,
            &f,
            &r,
            &TestFunction::standard_set(3, s.half_width()),
            HistogramConfig::default(),
        )
        .unwrap();
        assert!(rep.condition3_residual <= 1e-10, "{rep:?}");
        assert!((rep.compressibility.liouville_max - 1.0).abs() < 1e-15);
    }

    #[test]
    fn rotation_preserves_the_measure() {
        let s = r3();
        let f = rotation(&s);
        let r = integrate_rlf(&s, &f, &s.core_points(), 0.0, 0.5, Some(0.01)).unwrap();
        let rep = verify_rlf_axioms(
            &s,
            &f,
            &r,
            &TestFunction::standard_set(3, 1.0),
            HistogramConfig::default(),
        )
        .unwrap();
        let c = &rep.compressibility;
        assert!(c.l >= 0.9 && c.l <= 1.1, "{c:?}");
        assert!(!c.coarsened);
        assert!(rep.condition3_relative < 1e-3, "{rep:?}");
    }

    #[test]
    fn dilation_density_at_the_centre() {
        let s = r3();
        let f = make_field(
            FieldKind::Radial {
                rate: 1.0,
                inner: 0.5,
                outer: 0.7,
            },
            &s,
        )
        .unwrap();
        let t = 0.1;
        let interior: Vec<usize> = (0..s.len()).filter(|&i| s.is_interior(i)).collect();
        let r = integrate_rlf(&s, &f, &interior, 0.0, t, None).unwrap();
        let rep = verify_rlf_axioms(&s, &f, &r, &[], HistogramConfig::default()).unwrap();
        let expect = (-3.0 * t).exp();
        let got = rep.compressibility.centre_ratio.unwrap();
        assert!((got / expect - 1.0).abs() < 0.15, "{got} vs {expect}");
    }

    #[test]
    fn starved_histograms_are_coarsened() {
        let s = r3();
        let f = rotation(&s);
        let r = integrate_rlf(&s, &f, &[s.centre()], 0.0, 0.2, None).unwrap();
        let hist = HistogramConfig {
            bins: 16,
            samples_per_axis: 4,
            n_min: 32,
            seed: 1,
        };
        let rep = verify_rlf_axioms(&s, &f, &r, &[], hist).unwrap();
        assert!(rep.compressibility.coarsened);
        assert!(rep.compressibility.bins < 16);
    }

    #[test]
    fn rigid_fields_have_vanishing_left_hand_side() {
        let s = r3();
        let k = StationaryKernel::build(&s).unwrap();
        let pts = s.core_points();
        let pairs: Vec<(usize, usize)> = sampling::stratified_pairs(
            &s,
            &pts[..200],
            &pts,
            (0.3, 1.0),
            100,
            &mut sampling::rng(5),
        );
        for f in [
            rotation(&s),
            make_field(
                FieldKind::Constant {
                    velocity: vec![0.3, 0.0, 0.1],
                },
                &s,
            )
            .unwrap(),
        ] {
            let fit = verify_vector_maximal(&s, &f, &k, &pairs, 0.0, RadiusSearch::Exact).unwrap();
            assert!(fit.rigid);
            assert!(
                fit.normalized_lhs < RIGID_TOLERANCE,
                "{}",
                fit.normalized_lhs
            );
        }
    }

    #[test]
    fn derivative_formula_along_rotation_vanishes() {
        let s = r3();
        let k = StationaryKernel::build(&s).unwrap();
        let f = rotation(&s);
        let seeds: Vec<usize> = s.core_points().into_iter().step_by(53).collect();
        let r = integrate_rlf(&s, &f, &seeds, 0.0, 0.5, None).unwrap();
        let pairs: Vec<(usize, usize)> = (1..seeds.len()).map(|i| (0, i)).collect();
        let mg = vec![0.0; s.len()];
        let rep = verify_green_derivative(&s, &f, &r, &k, &mg, &pairs, 3).unwrap();
        assert!(rep.evaluations > 0);
        // dG/dt and the formula agree and both are small against |b||∇G|.
        assert!(
            rep.absolute_max < 1e-2 * rep.formula_max.max(1.0),
            "{rep:?}"
        );
    }
}
