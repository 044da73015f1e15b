//! Hardy-Littlewood maximal functions for `d` and `d_G`, and the scalar
//! Green maximal estimate
//! `∫ f |∇G_x| |∇G_y| dm ≤ C_M G(x,y) (Mf(x) + Mf(y))`.
//!
//! Balls are restricted to the fully sampled range of their centre (radius
//! below [`MmSpace::sampled_radius`]); beyond it the sampled ball would be a
//! truncated box rather than a ball.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::green::GreenField;
use crate::space::MmSpace;
use crate::{Error, Result};

/// Radii over which the supremum of ball averages is taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum RadiusSearch {
    /// Every radius: the average over each distinct distance shell prefix.
    /// This is the exact supremum for a sampled space.
    Exact,
    /// Geometric radii `r₀ q^k` starting at the smallest nonzero distance;
    /// a lower bound on the exact supremum.
    Geometric { ratio: f64 },
}

impl Default for RadiusSearch {
    fn default() -> Self {
        RadiusSearch::Exact
    }
}

fn check_function(space: &MmSpace, f: &[f64]) -> Result<()> {
    if f.len() != space.len() {
        return Err(Error::InvalidParameter(format!(
            "function has {} values for {} points",
            f.len(),
            space.len()
        )));
    }
    if let Some(v) = f.iter().find(|v| !(**v >= 0.0 && v.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "function value {v} is not finite nonnegative"
        )));
    }
    Ok(())
}

/// Relative width within which distances count as one shell. Metric
/// distances are exact up to rounding. `d_G` values of one lattice shell
/// spread by about `1e-3` (boundary influence and lattice anisotropy of the
/// discrete Green function), below the accuracy to which `G` approximates
/// its continuum counterpart, so such shells are merged.
const METRIC_TIE: f64 = 1e-12;
const GREEN_TIE: f64 = 2e-3;

/// Supremum of prefix averages of `f` over points sorted by `key`.
fn sup_average(
    mut keyed: Vec<(f64, usize)>,
    f: &[f64],
    space: &MmSpace,
    search: RadiusSearch,
    tie: f64,
) -> f64 {
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let (mut num, mut den, mut best) = (0.0, 0.0, 0.0f64);
    match search {
        RadiusSearch::Exact => {
            let mut i = 0;
            while i < keyed.len() {
                let k = keyed[i].0;
                while i < keyed.len() && keyed[i].0 <= k * (1.0 + tie) {
                    let y = keyed[i].1;
                    num += f[y] * space.weight(y);
                    den += space.weight(y);
                    i += 1;
                }
                best = best.max(num / den);
            }
        }
        RadiusSearch::Geometric { ratio } => {
            let r0 = keyed.iter().map(|k| k.0).find(|&k| k > 0.0);
            let Some(mut r) = r0 else {
                let y = keyed[0].1;
                return f[y];
            };
            // The first radius keeps only the centre: r₀ itself is excluded.
            let mut i = 0;
            let last = keyed.last().expect("nonempty").0;
            let mut threshold = r;
            loop {
                while i < keyed.len() && keyed[i].0 < threshold {
                    let y = keyed[i].1;
                    num += f[y] * space.weight(y);
                    den += space.weight(y);
                    i += 1;
                }
                if den > 0.0 {
                    best = best.max(num / den);
                }
                if threshold > last {
                    break;
                }
                r *= ratio;
                threshold = r;
            }
        }
    }
    best
}

fn check_search(search: RadiusSearch) -> Result<()> {
    match search {
        RadiusSearch::Geometric { ratio } if !(ratio > 1.0) => Err(Error::InvalidParameter(
            format!("radius ratio {ratio} must exceed 1"),
        )),
        _ => Ok(()),
    }
}

/// `Mf` at `points`.
pub fn hardy_littlewood(
    space: &MmSpace,
    f: &[f64],
    points: &[usize],
    search: RadiusSearch,
) -> Result<Vec<f64>> {
    check_function(space, f)?;
    check_search(search)?;
    Ok(points
        .par_iter()
        .map(|&x| {
            let mut keyed = Vec::new();
            space.for_each_in_ball(x, space.sampled_radius(x), |y, d| keyed.push((d, y)));
            sup_average(keyed, f, space, search, METRIC_TIE)
        })
        .collect())
}

/// `M^G f` at `points`, with `d_G`-balls taken from the Green columns.
pub fn g_maximal(
    field: &GreenField,
    f: &[f64],
    points: &[usize],
    search: RadiusSearch,
) -> Result<Vec<f64>> {
    let space = field.op().space().clone();
    check_function(&space, f)?;
    check_search(search)?;
    field.ensure(points)?;
    Ok(points
        .par_iter()
        .map(|&x| {
            let col = field.cached(x).expect("ensured");
            let limit = space.sampled_radius(x);
            let mut order: Vec<(f64, usize)> = (0..space.len())
                .filter(|&y| y == x || col.values[y] > 0.0)
                .map(|y| (if y == x { 0.0 } else { 1.0 / col.values[y] }, y))
                .collect();
            order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            // Stop before the first G-ball that is no longer fully sampled.
            let cut = order.iter().position(|&(_, y)| space.dist(x, y) >= limit);
            if let Some(c) = cut {
                let edge = order[c].0;
                order.retain(|&(k, _)| k < edge);
            }
            sup_average(order, f, &space, search, GREEN_TIE)
        })
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct DominationFit {
    /// `max M^G f / M f` over the sample.
    pub c: f64,
    pub evaluations: usize,
    /// `(function index, point)` attaining the maximum.
    pub worst: Option<(usize, usize)>,
}

/// Fit `C` in `M^G f ≤ C M f` over a family of functions and points.
pub fn verify_mg_domination(
    field: &GreenField,
    functions: &[Vec<f64>],
    points: &[usize],
    search: RadiusSearch,
) -> Result<DominationFit> {
    let space = field.op().space().clone();
    let mut fit = DominationFit {
        c: 0.0,
        evaluations: 0,
        worst: None,
    };
    for (k, f) in functions.iter().enumerate() {
        let m = hardy_littlewood(&space, f, points, search)?;
        let mg = g_maximal(field, f, points, search)?;
        for (i, (&a, &b)) in m.iter().zip(&mg).enumerate() {
            if a > 0.0 {
                fit.evaluations += 1;
                if b / a > fit.c {
                    fit.c = b / a;
                    fit.worst = Some((k, points[i]));
                }
            }
        }
    }
    Ok(fit)
}

#[derive(Debug, Clone, Serialize)]
pub struct MaximalRow {
    pub x: usize,
    pub y: usize,
    /// `Σ_w f(w) |∇G_x|(w) |∇G_y|(w) m_w`.
    pub lhs: f64,
    /// `G(x,y) (Mf(x) + Mf(y))`.
    pub rhs: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GreenMaximalFit {
    pub cm: f64,
    pub rows: Vec<MaximalRow>,
    /// Pairs with a zero right-hand side.
    pub skipped: Vec<(usize, usize)>,
}

/// Fit `C_M` over `pairs` for `f ≥ 0` supported in the core region.
pub fn verify_scalar_green_maximal(
    field: &GreenField,
    f: &[f64],
    pairs: &[(usize, usize)],
    search: RadiusSearch,
) -> Result<GreenMaximalFit> {
    let space = field.op().space().clone();
    check_function(&space, f)?;
    if let Some(i) = (0..space.len()).find(|&i| f[i] != 0.0 && !space.is_core(i)) {
        return Err(Error::InvalidParameter(format!(
            "f is nonzero at non-core point {i}"
        )));
    }
    let mut points: Vec<usize> = pairs.iter().flat_map(|&(x, y)| [x, y]).collect();
    points.sort_unstable();
    points.dedup();
    field.ensure(&points)?;
    let mf = hardy_littlewood(&space, f, &points, search)?;
    let mf_at = |p: usize| mf[points.binary_search(&p).expect("listed")];
    let rows: Vec<Option<MaximalRow>> = pairs
        .par_iter()
        .map(|&(x, y)| {
            let (cx, cy) = (
                field.cached(x).expect("ensured"),
                field.cached(y).expect("ensured"),
            );
            let lhs: f64 = (0..space.len())
                .filter(|&w| f[w] != 0.0)
                .map(|w| f[w] * cx.gradient[w] * cy.gradient[w] * space.weight(w))
                .sum();
            let rhs = cx.values[y] * (mf_at(x) + mf_at(y));
            (rhs > 0.0).then(|| MaximalRow {
                x,
                y,
                lhs,
                rhs,
                ratio: lhs / rhs,
            })
        })
        .collect();
    let mut fit = GreenMaximalFit {
        cm: 0.0,
        rows: Vec::new(),
        skipped: Vec::new(),
    };
    for (row, &pair) in rows.into_iter().zip(pairs) {
        match row {
            Some(r) => {
                fit.cm = fit.cm.max(r.ratio);
                fit.rows.push(r);
            }
            None => fit.skipped.push(pair),
        }
    }
    Ok(fit)
}

/// `‖Mf‖_{L²(P)} / ‖f‖_{L²}` for `f` supported in the region `P`.
pub fn local_maximal_ratio(
    space: &MmSpace,
    f: &[f64],
    region: &[usize],
    search: RadiusSearch,
) -> Result<f64> {
    check_function(space, f)?;
    let mut inside = vec![false; space.len()];
    for &i in region {
        inside[i] = true;
    }
    if let Some(i) = (0..space.len()).find(|&i| f[i] != 0.0 && !inside[i]) {
        return Err(Error::InvalidParameter(format!(
            "f is nonzero outside the region at {i}"
        )));
    }
    let mf = hardy_littlewood(space, f, region, search)?;
    let num: f64 = region
        .iter()
        .zip(&mf)
        .map(|(&i, m)| m * m * space.weight(i))
        .sum();
    let den: f64 = (0..space.len())
        .map(|i| f[i] * f[i] * space.weight(i))
        .sum();
    if den == 0.0 {
        return Err(Error::InvalidParameter("f vanishes identically".into()));
    }
    Ok((num / den).sqrt())
}

/// Per-pair ledger with columns `x, y, lhs, rhs, ratio`.
pub fn write_maximal_csv<W: Write>(out: W, fit: &GreenMaximalFit) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "lhs", "rhs", "ratio"])?;
    for r in &fit.rows {
        w.write_record([
            r.x.to_string(),
            r.y.to_string(),
            format!("{:e}", r.lhs),
            format!("{:e}", r.rhs),
            format!("{:e}", r.ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}
