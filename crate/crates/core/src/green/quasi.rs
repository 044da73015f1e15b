//! The Green quasi-metric `d_G = 1/G` and its structural constants.

use std::collections::HashMap;

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::GreenField;
use crate::space::{in_open_ball, MmSpace};
use crate::{Error, Result};

/// `d_G` on an evaluation set, indexed by position in `points`.
#[derive(Debug, Clone, Serialize)]
pub struct DgTable {
    pub points: Vec<usize>,
    /// Row-major `k × k`; `NaN` where `G ≤ 0`.
    pub values: Vec<f64>,
    /// Pairs (as space indices) dropped because `G ≤ 0`.
    pub excluded: Vec<(usize, usize)>,
}

impl DgTable {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `d_G` between the `a`-th and `b`-th evaluation points.
    pub fn get(&self, a: usize, b: usize) -> Option<f64> {
        let v = self.values[a * self.points.len() + b];
        (!v.is_nan()).then_some(v)
    }

    /// Position of a space point in the table.
    pub fn position(&self, x: usize) -> Option<usize> {
        self.points.iter().position(|&p| p == x)
    }
}

/// Tabulate `d_G(x, y) = 1/G(x, y)` (symmetrised over the two columns),
/// `0` on the diagonal.
pub fn quasi_metric(field: &GreenField, points: &[usize]) -> Result<DgTable> {
    field.ensure(points)?;
    let k = points.len();
    let cols: Vec<_> = points
        .iter()
        .map(|&x| field.cached(x).expect("ensured"))
        .collect();
    let values: Vec<f64> = (0..k * k)
        .into_par_iter()
        .map(|ab| {
            let (a, b) = (ab / k, ab % k);
            if a == b {
                return 0.0;
            }
            let g = 0.5 * (cols[a].values[points[b]] + cols[b].values[points[a]]);
            if g > 0.0 {
                1.0 / g
            } else {
                f64::NAN
            }
        })
        .collect();
    let mut excluded = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            if values[a * k + b].is_nan() {
                excluded.push((points[a], points[b]));
            }
        }
    }
    Ok(DgTable {
        points: points.to_vec(),
        values,
        excluded,
    })
}

/// Least-squares fit of `d_G ≈ A d^β` in log-log coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct ProportionalityFit {
    pub prefactor: f64,
    pub exponent: f64,
    pub pairs: usize,
    /// Largest relative deviation of `d_G` from the fitted law.
    pub max_deviation: f64,
}

pub fn fit_proportionality(
    space: &MmSpace,
    table: &DgTable,
    (dmin, dmax): (f64, f64),
) -> Result<ProportionalityFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for a in 0..table.len() {
        for b in a + 1..table.len() {
            let d = space.dist(table.points[a], table.points[b]);
            if let (Some(g), true) = (table.get(a, b), d >= dmin && d <= dmax) {
                xs.push(d.ln());
                ys.push(g.ln());
            }
        }
    }
    if xs.len() < 2 {
        return Err(Error::InvalidParameter(
            "fewer than two pairs in the distance range".into(),
        ));
    }
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::InvalidParameter(
            "all pairs at the same distance".into(),
        ));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let exponent = sxy / sxx;
    let log_a = my - exponent * mx;
    let max_deviation = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| ((y - log_a - exponent * x).exp() - 1.0).abs())
        .fold(0.0, f64::max);
    Ok(ProportionalityFit {
        prefactor: log_a.exp(),
        exponent,
        pairs: xs.len(),
        max_deviation,
    })
}

/// `d_G` along points approaching `x`: `(d, d_G)` sorted by decreasing `d`,
/// one point per dyadic distance band below `rmax`.
pub fn continuity_profile(field: &GreenField, x: usize, rmax: f64) -> Result<Vec<(f64, f64)>> {
    let col = field
        .cached(x)
        .ok_or_else(|| Error::Precondition(format!("no Green column for {x}")))?;
    let space = field.op().space();
    let mut best: HashMap<i32, (f64, f64)> = HashMap::new();
    for y in 0..space.len() {
        let d = space.dist(x, y);
        let g = col.values[y];
        if y == x || d >= rmax || g <= 0.0 {
            continue;
        }
        let band = (rmax / d).log2().floor() as i32;
        let e = best.entry(band).or_insert((d, 1.0 / g));
        if d > e.0 {
            *e = (d, 1.0 / g);
        }
    }
    let mut out: Vec<(f64, f64)> = best.into_values().collect();
    out.sort_by(|a, b| b.0.total_cmp(&a.0));
    Ok(out)
}

#[derive(Debug, Clone, Serialize)]
pub struct TriangleFit {
    /// `sup d_G(x,y) / (d_G(x,z) + d_G(z,y))`, at least 1.
    pub ct: f64,
    pub triples_used: usize,
    pub triples_skipped: usize,
    /// Space indices `[x, y, z]` of the worst triple.
    pub worst: Option<[usize; 3]>,
}

/// Fit the quasi-triangle constant over triples `[x, y, z]` given as table
/// positions. Triples with a coincident pair have ratio at most 1.
pub fn fit_quasi_triangle(table: &DgTable, triples: &[[usize; 3]]) -> TriangleFit {
    let mut fit = TriangleFit {
        ct: 1.0,
        triples_used: 0,
        triples_skipped: 0,
        worst: None,
    };
    for &[x, y, z] in triples {
        let (Some(a), Some(b), Some(c)) = (table.get(x, y), table.get(x, z), table.get(z, y))
        else {
            fit.triples_skipped += 1;
            continue;
        };
        fit.triples_used += 1;
        if a == 0.0 {
            continue;
        }
        let ratio = a / (b + c);
        if ratio > fit.ct {
            fit.ct = ratio;
            fit.worst = Some([table.points[x], table.points[y], table.points[z]]);
        }
    }
    fit
}

/// Triples `[x, y, m]` (table positions) where `m` is a metric midpoint of
/// `x` and `y` within the table, i.e. minimises `max(d(x,m), d(m,y))`.
/// Such triples are where quasi-triangle ratios of power metrics peak.
pub fn midpoint_triples(
    space: &MmSpace,
    table: &DgTable,
    count: usize,
    rng: &mut impl Rng,
) -> Vec<[usize; 3]> {
    let k = table.len();
    if k < 3 {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let x = rng.gen_range(0..k);
            let mut y = rng.gen_range(0..k - 1);
            if y >= x {
                y += 1;
            }
            let (px, py) = (table.points[x], table.points[y]);
            let m = (0..k)
                .filter(|&m| m != x && m != y)
                .min_by(|&a, &b| {
                    let fa = space
                        .dist(px, table.points[a])
                        .max(space.dist(table.points[a], py));
                    let fb = space
                        .dist(px, table.points[b])
                        .max(space.dist(table.points[b], py));
                    fa.total_cmp(&fb)
                })
                .expect("k ≥ 3");
            [x, y, m]
        })
        .collect()
}

/// `B^G(x, r) = {y : d_G(x, y) < r}` from the solved column of `x`.
pub fn g_ball(field: &GreenField, x: usize, r: f64) -> Result<Vec<usize>> {
    let col = field
        .cached(x)
        .ok_or_else(|| Error::Precondition(format!("no Green column for {x}")))?;
    Ok((0..col.values.len())
        .filter(|&y| y == x || (col.values[y] > 0.0 && in_open_ball(1.0 / col.values[y], r)))
        .collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct GDoublingFit {
    /// `max m(B^G(x,2r)) / m(B^G(x,r))` over retained samples.
    pub cg: f64,
    /// `(x, r, ratio)` of every retained sample.
    pub samples: Vec<(usize, f64, f64)>,
    /// `(x, r, reason)` of every dropped sample.
    pub excluded: Vec<(usize, f64, String)>,
}

/// Fit the doubling constant of `d_G`-balls. A radius is dropped when
/// `B^G(x, 2r)` leaves the core or `B^G(x, r)` is the single point `x`.
pub fn fit_g_doubling(
    field: &GreenField,
    sources: &[usize],
    radii: &[f64],
) -> Result<GDoublingFit> {
    field.ensure(sources)?;
    let space = field.op().space().clone();
    let mut fit = GDoublingFit {
        cg: 1.0,
        samples: Vec::new(),
        excluded: Vec::new(),
    };
    for &x in sources {
        let col = field.cached(x).expect("ensured");
        let dg: Vec<f64> = col
            .values
            .iter()
            .enumerate()
            .map(|(y, &g)| {
                if y == x {
                    0.0
                } else if g > 0.0 {
                    1.0 / g
                } else {
                    f64::INFINITY
                }
            })
            .collect();
        for &r in radii {
            let mut inner = (0.0, 0usize);
            let mut outer = 0.0;
            let mut escaped = false;
            for (y, &d) in dg.iter().enumerate() {
                if in_open_ball(d, 2.0 * r) {
                    outer += space.weight(y);
                    escaped |= !space.is_core(y);
                    if in_open_ball(d, r) {
                        inner.0 += space.weight(y);
                        inner.1 += 1;
                    }
                }
            }
            if escaped {
                fit.excluded
                    .push((x, r, "B^G(x, 2r) leaves the core".into()));
            } else if inner.1 <= 1 {
                fit.excluded
                    .push((x, r, "below the resolution floor".into()));
            } else {
                let ratio = outer / inner.0;
                fit.cg = fit.cg.max(ratio);
                fit.samples.push((x, r, ratio));
            }
        }
    }
    if fit.samples.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "every radius was excluded ({} samples)",
            fit.excluded.len()
        )));
    }
    Ok(fit)
}
