//! Volume-density dimension estimates, Green-function asymptotics at regular
//! points, the Vitali covering estimator for images of maps with improved
//! regularity, and the pushforward dimension diagnostic.

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::flow::FlowResult;
use crate::space::MmSpace;
use crate::{unit_ball_volume, Error, Result};

/// Candidate dimensions.
pub const MAX_K: usize = 6;

/// Radii per window.
pub const WINDOW_RADII: usize = 12;

/// Smallest admissible `hi / lo` of a window: half a decade.
pub fn min_window_ratio() -> f64 {
    10f64.sqrt()
}

/// Radius window `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Window {
    pub lo: f64,
    pub hi: f64,
}

impl Window {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0 && hi.is_finite()) || hi < lo * min_window_ratio() * (1.0 - 1e-12) {
            return Err(Error::WindowTooNarrow { lo, hi });
        }
        Ok(Self { lo, hi })
    }

    /// Log-spaced radii.
    pub fn radii(&self) -> Vec<f64> {
        let n = WINDOW_RADII;
        (0..n)
            .map(|i| self.lo * (self.hi / self.lo).powf(i as f64 / (n - 1) as f64))
            .collect()
    }
}

/// `[4h, min(core_radius / 2, R)]` where `R` is the smallest fully sampled
/// radius over core points, so that one window serves every core point.
pub fn default_window(space: &MmSpace) -> Result<Window> {
    let l = space
        .lattice()
        .ok_or_else(|| Error::Precondition("default window needs a lattice".into()))?;
    // Core points are symmetric about the centre; scan one axis.
    let side = l.side;
    let mut idx = vec![side / 2; l.dim];
    let mut sampled = f64::INFINITY;
    for a in 0..side {
        idx[0] = a;
        let p = l.index(&idx);
        if space.is_core(p) {
            sampled = sampled.min(space.sampled_radius(p));
        }
    }
    if !sampled.is_finite() {
        return Err(Error::Precondition("space has no core points".into()));
    }
    Window::new(4.0 * l.spacing, (0.5 * space.core_radius()).min(sampled))
}

/// Dimension estimate at one point.
#[derive(Debug, Clone, Serialize)]
pub struct PointDimension {
    pub x: usize,
    pub k: usize,
    /// Geometric mean of `m(B(x, r)) / (ω_k r^k)` over the window.
    pub theta: f64,
    /// RMS log residual of the best fit.
    pub residual: f64,
    /// Residuals of all candidates `k = 1..=MAX_K`.
    pub residuals: Vec<f64>,
}

fn check_window(space: &MmSpace, x: usize, w: Window) -> Result<()> {
    let sampled = space.sampled_radius(x);
    if w.hi > sampled * (1.0 + 1e-12) {
        return Err(Error::RadiusOutOfRange {
            radius: w.hi,
            sampled,
        });
    }
    Ok(())
}

/// Integer `k̂` minimizing the log-log residual of `m(B(x, r))` against
/// `θ ω_k r^k` over the window, with `θ̂` fitted at `k̂`.
pub fn estimate_dimension(space: &MmSpace, x: usize, window: Window) -> Result<PointDimension> {
    check_window(space, x, window)?;
    let radii = window.radii();
    let vols: Vec<f64> = radii
        .iter()
        .map(|&r| space.empirical_volume(x, r))
        .collect();
    if vols.windows(2).any(|v| v[1] < v[0]) {
        return Err(Error::Corrupt(format!(
            "non-monotone volume profile at {x}"
        )));
    }
    if vols[0] <= 0.0 {
        return Err(Error::WindowTooNarrow {
            lo: window.lo,
            hi: window.hi,
        });
    }
    let n = radii.len() as f64;
    let mut best = (0, f64::INFINITY, 0.0);
    let mut residuals = Vec::with_capacity(MAX_K);
    for k in 1..=MAX_K {
        let wk = unit_ball_volume(k).ln();
        let y: Vec<f64> = radii
            .iter()
            .zip(&vols)
            .map(|(r, v)| v.ln() - wk - k as f64 * r.ln())
            .collect();
        let mean = y.iter().sum::<f64>() / n;
        let res = (y.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
        residuals.push(res);
        if res < best.1 {
            best = (k, res, mean.exp());
        }
    }
    Ok(PointDimension {
        x,
        k: best.0,
        theta: best.2,
        residual: best.1,
        residuals,
    })
}

/// Estimates at many points, with failures kept alongside.
#[derive(Debug, Clone, Serialize)]
pub struct DimensionReport {
    pub window: Window,
    pub points: Vec<PointDimension>,
    /// `(k̂, count)`.
    pub histogram: BTreeMap<usize, usize>,
    pub failures: Vec<(usize, String)>,
}

pub fn estimate_dimensions(space: &MmSpace, points: &[usize], window: Window) -> DimensionReport {
    let results: Vec<(usize, Result<PointDimension>)> = points
        .par_iter()
        .map(|&x| (x, estimate_dimension(space, x, window)))
        .collect();
    let mut out = Vec::new();
    let mut failures = Vec::new();
    let mut histogram = BTreeMap::new();
    for (x, r) in results {
        match r {
            Ok(p) => {
                *histogram.entry(p.k).or_insert(0) += 1;
                out.push(p);
            }
            Err(e) => failures.push((x, e.to_string())),
        }
    }
    DimensionReport {
        window,
        points: out,
        histogram,
        failures,
    }
}

/// Aggregate over all core points without storing per-point rows, for
/// lattices too large for a table.
#[derive(Debug, Clone, Default, Serialize)]
pub struct DimensionSummary {
    pub histogram: BTreeMap<usize, usize>,
    pub failures: usize,
    pub theta_min: f64,
    pub theta_max: f64,
    pub residual_max: f64,
}

pub fn core_dimension_summary(space: &MmSpace, window: Window) -> DimensionSummary {
    let empty = || DimensionSummary {
        theta_min: f64::INFINITY,
        theta_max: 0.0,
        ..Default::default()
    };
    (0..space.len())
        .into_par_iter()
        .filter(|&i| space.is_core(i))
        .fold(empty, |mut acc, x| {
            match estimate_dimension(space, x, window) {
                Ok(p) => {
                    *acc.histogram.entry(p.k).or_insert(0) += 1;
                    acc.theta_min = acc.theta_min.min(p.theta);
                    acc.theta_max = acc.theta_max.max(p.theta);
                    acc.residual_max = acc.residual_max.max(p.residual);
                }
                Err(_) => acc.failures += 1,
            }
            acc
        })
        .reduce(empty, |mut a, b| {
            for (k, c) in b.histogram {
                *a.histogram.entry(k).or_insert(0) += c;
            }
            a.failures += b.failures;
            a.theta_min = a.theta_min.min(b.theta_min);
            a.theta_max = a.theta_max.max(b.theta_max);
            a.residual_max = a.residual_max.max(b.residual_max);
            a
        })
}

/// Per-point table with columns `x, k, theta, residual`.
pub fn write_dimension_csv<W: Write>(out: W, report: &DimensionReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "k", "theta", "residual"])?;
    for p in &report.points {
        w.write_record([
            p.x.to_string(),
            p.k.to_string(),
            format!("{:e}", p.theta),
            format!("{:e}", p.residual),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct AsymptoticsReport {
    pub x: usize,
    pub k: usize,
    pub theta: f64,
    pub radii: Vec<f64>,
    /// `F(x, r) r^{k-2}`.
    pub values: Vec<f64>,
    /// Geometric mean of `values`.
    pub plateau: f64,
    /// `1 / ((k - 2) ω_k θ)`.
    pub predicted: f64,
    /// `max |value / predicted - 1|`.
    pub max_deviation: f64,
    /// `|plateau / predicted - 1|`.
    pub plateau_deviation: f64,
}

/// Compare `F(x, r) r^{k̂-2}` over the window with its small-radius limit
/// `1 / ((k̂ - 2) ω_k̂ θ̂)`.
pub fn verify_green_asymptotics(
    space: &MmSpace,
    x: usize,
    window: Window,
) -> Result<AsymptoticsReport> {
    let dim = estimate_dimension(space, x, window)?;
    if dim.k < 3 {
        return Err(Error::BelowGreenDimension(dim.k));
    }
    let fh = space.fh_profile(x)?;
    let radii = window.radii();
    let e = dim.k as i32 - 2;
    let values: Vec<f64> = radii.iter().map(|&r| fh.f(r) * r.powi(e)).collect();
    let plateau = (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp();
    let predicted = 1.0 / (e as f64 * unit_ball_volume(dim.k) * dim.theta);
    let max_deviation = values
        .iter()
        .map(|v| (v / predicted - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(AsymptoticsReport {
        x,
        k: dim.k,
        theta: dim.theta,
        radii,
        values,
        plateau,
        predicted,
        max_deviation,
        plateau_deviation: (plateau / predicted - 1.0).abs(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct SardReport {
    pub n: usize,
    pub k: usize,
    pub delta: f64,
    pub epsilon: f64,
    /// Selected disjoint balls `(centre index, radius)`.
    pub balls: Vec<(usize, f64)>,
    /// `Σ ω_k 5ⁿ ε^k r_iⁿ`.
    pub bound: f64,
    /// Points whose selection radius had to drop below `δ / 10` because the
    /// modulus fails nearby.
    pub violations: usize,
    /// Smallest `ε` for which every point keeps radius `δ / 10`.
    pub fitted_epsilon: f64,
    /// Cubes of side `δ / √m` meeting `Φ(A)`.
    pub boxes: usize,
    /// `boxes · ω_k (δ / 2)^k`.
    pub box_estimate: f64,
    pub dominates: bool,
}

/// Vitali covering bound on `H^k_δ(Φ(A))` for a sample `A ⊂ Rⁿ` (flattened)
/// with images `phi` in `R^m` (flattened), given the modulus `ε` of
/// `|Φ(y) - Φ(x)| ≤ ε |y - x|^{n/k}`.
///
/// Each point gets the largest radius `r_x ≤ δ/10` such that the modulus
/// holds on `A ∩ B(x, 5 r_x)` and the image of that ball has diameter at
/// most `δ`; balls are then selected greedily by decreasing radius.
pub fn sard_covering_estimate(
    a: &[f64],
    n: usize,
    phi: &[f64],
    m: usize,
    k: usize,
    delta: f64,
    epsilon: f64,
) -> Result<SardReport> {
    if k == 0 || k >= n {
        return Err(Error::Precondition(format!(
            "need 1 ≤ k < n, got k = {k}, n = {n}"
        )));
    }
    if m == 0 || a.len() % n != 0 || phi.len() != a.len() / n * m || a.is_empty() {
        return Err(Error::InvalidParameter(
            "sample and image sizes disagree".into(),
        ));
    }
    if !(delta > 0.0 && epsilon > 0.0) {
        return Err(Error::InvalidParameter("δ and ε must be positive".into()));
    }
    let count = a.len() / n;
    let p = n as f64 / k as f64;
    let pt = |i: usize| &a[i * n..(i + 1) * n];
    let im = |i: usize| &phi[i * m..(i + 1) * m];
    let dist = |u: &[f64], v: &[f64]| -> f64 {
        u.iter()
            .zip(v)
            .map(|(x, y)| (x - y).powi(2))
            .sum::<f64>()
            .sqrt()
    };
    let r_max = (delta / 10.0).min((delta / (2.0 * epsilon)).powf(1.0 / p) / 5.0);
    let per_point: Vec<(f64, f64)> = (0..count)
        .into_par_iter()
        .map(|i| {
            let mut nearest_bad = f64::INFINITY;
            let mut need = 0.0f64;
            for j in 0..count {
                if j == i {
                    continue;
                }
                let d = dist(pt(i), pt(j));
                // Repeated sample points carry no modulus information.
                if d >= 5.0 * r_max || d == 0.0 {
                    continue;
                }
                let ratio = dist(im(i), im(j)) / d.powf(p);
                need = need.max(ratio);
                if ratio > epsilon {
                    nearest_bad = nearest_bad.min(d);
                }
            }
            (r_max.min(nearest_bad / 5.0), need)
        })
        .collect();
    let violations = per_point.iter().filter(|v| v.0 < r_max).count();
    let fitted_epsilon = per_point.iter().map(|v| v.1).fold(0.0, f64::max);
    let mut order: Vec<usize> = (0..count).collect();
    order.sort_by(|&i, &j| per_point[j].0.total_cmp(&per_point[i].0).then(i.cmp(&j)));
    let mut balls: Vec<(usize, f64)> = Vec::new();
    for i in order {
        let r = per_point[i].0;
        if balls.iter().all(|&(c, rc)| dist(pt(i), pt(c)) >= r + rc) {
            balls.push((i, r));
        }
    }
    let wk = unit_ball_volume(k);
    let bound: f64 = balls
        .iter()
        .map(|&(_, r)| wk * 5f64.powi(n as i32) * epsilon.powi(k as i32) * r.powi(n as i32))
        .sum();
    let side = delta / (m as f64).sqrt();
    let cubes: std::collections::HashSet<Vec<i64>> = (0..count)
        .map(|i| im(i).iter().map(|c| (c / side).floor() as i64).collect())
        .collect();
    let box_estimate = cubes.len() as f64 * wk * (delta / 2.0).powi(k as i32);
    Ok(SardReport {
        n,
        k,
        delta,
        epsilon,
        balls,
        bound,
        violations,
        fitted_epsilon,
        boxes: cubes.len(),
        box_estimate,
        dominates: bound >= box_estimate,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct ConstancyReport {
    pub window: Window,
    pub samples: usize,
    /// `k̂ → count` at the seeds.
    pub before: BTreeMap<usize, usize>,
    /// `k̂ → count` at the nearest lattice points of the final positions.
    pub after: BTreeMap<usize, usize>,
    /// Seeds that left the box or whose final point admits no estimate; they
    /// enter the distance as their own category.
    pub unresolved_before: usize,
    pub unresolved_after: usize,
    pub tv_distance: f64,
    /// Fraction of mass that moved from `k̂ = n` to `k̂ < n`.
    pub dimension_drop: f64,
    pub violation: bool,
}

/// Smallest number of seeds accepted by the diagnostic.
pub const MIN_CONSTANCY_SAMPLES: usize = 50;

/// Compare `k̂` histograms at the seeds of `result` and at the endpoints of
/// their trajectories; a drop from the ambient dimension beyond `tolerance`
/// is flagged.
pub fn constancy_diagnostic(
    space: &MmSpace,
    result: &FlowResult,
    window: Window,
    tolerance: f64,
) -> Result<ConstancyReport> {
    let l = space
        .lattice()
        .ok_or_else(|| Error::Precondition("pushforward needs a lattice".into()))?;
    let samples = result.seeds.len();
    if samples < MIN_CONSTANCY_SAMPLES {
        return Err(Error::Precondition(format!(
            "{samples} pushforward samples, need {MIN_CONSTANCY_SAMPLES}"
        )));
    }
    let last = result.steps();
    let classify = |x: Option<usize>| -> Option<usize> {
        x.and_then(|p| estimate_dimension(space, p, window).ok())
            .map(|d| d.k)
    };
    let pairs: Vec<(Option<usize>, Option<usize>)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let b = classify(Some(result.seeds[i]));
            let a = if result.exited[i] {
                None
            } else {
                classify(space.nearest_point(result.position(i, last)))
            };
            (b, a)
        })
        .collect();
    let hist = |f: &dyn Fn(&(Option<usize>, Option<usize>)) -> Option<usize>| {
        let mut h = BTreeMap::new();
        let mut none = 0;
        for p in &pairs {
            match f(p) {
                Some(k) => *h.entry(k).or_insert(0) += 1,
                None => none += 1,
            }
        }
        (h, none)
    };
    let (before, ub) = hist(&|p| p.0);
    let (after, ua) = hist(&|p| p.1);
    let mut keys: Vec<usize> = before.keys().chain(after.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    let s = samples as f64;
    let mut tv = (ub as f64 - ua as f64).abs() / s;
    for k in keys {
        let (b, a) = (
            before.get(&k).copied().unwrap_or(0),
            after.get(&k).copied().unwrap_or(0),
        );
        tv += (b as f64 - a as f64).abs() / s;
    }
    tv *= 0.5;
    let n = l.dim;
    let dropped = pairs
        .iter()
        .filter(|p| p.0 == Some(n) && p.1.is_some_and(|k| k < n))
        .count();
    let dimension_drop = dropped as f64 / s;
    Ok(ConstancyReport {
        window,
        samples,
        before,
        after,
        unresolved_before: ub,
        unresolved_after: ua,
        tv_distance: tv,
        dimension_drop,
        violation: dimension_drop > tolerance,
    })
}

/// `k̂` histogram of arbitrary points, for spaces without flows.
pub fn dimension_histogram(
    space: &MmSpace,
    points: &[usize],
    window: Window,
) -> HashMap<usize, usize> {
    estimate_dimensions(space, points, window)
        .histogram
        .into_iter()
        .collect()
}
