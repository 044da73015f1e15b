//! Semigroup/symmetry/mass checks and Gaussian two-sided bound fits.

use serde::Serialize;

use super::{gradient_magnitude, GradientRule, HeatKernel};
use crate::linalg::compensated_sum;
use crate::{Error, Result};

/// Constants above this are reported as unbounded.
pub const DEFAULT_CONSTANT_CAP: f64 = 1e6;

/// Shifts tried, in order, when fitting the Gaussian bounds.
const SHIFT_CANDIDATES: [f64; 10] = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

#[derive(Debug, Clone, Serialize)]
pub struct HeatPropertyReport {
    /// `max |p_{t+s}(x,y) - ∫ p_t(x,z) p_s(z,y) dm(z)|`, relative to `max_y p_{t+s}(x,y)`.
    pub semigroup_residual: f64,
    /// `max |p_t(x,y) - p_t(y,x)|`, relative.
    pub symmetry_residual: f64,
    /// `max(0, -min p_t)`, relative.
    pub positivity_violation: f64,
    pub mass_min: f64,
    pub mass_max: f64,
    /// Spectral vs. reference agreement on pairs where `p_t` is significant.
    pub cross_mode: Option<f64>,
}

/// Check the heat semigroup on a sample of pairs and all pairs of times.
/// `reference` is a second kernel (other backend) for cross-mode agreement.
pub fn verify_heat_properties(
    kernel: &HeatKernel,
    times: &[f64],
    pairs: &[(usize, usize)],
    reference: Option<&HeatKernel>,
) -> Result<HeatPropertyReport> {
    if times.is_empty() {
        return Err(Error::InvalidParameter("no times supplied".into()));
    }
    let space = kernel.op().space().clone();
    let w = space.weights();
    let mut rep = HeatPropertyReport {
        semigroup_residual: 0.0,
        symmetry_residual: 0.0,
        positivity_violation: 0.0,
        mass_min: f64::INFINITY,
        mass_max: 0.0,
        cross_mode: None,
    };
    let mut sources: Vec<usize> = pairs.iter().flat_map(|&(x, y)| [x, y]).collect();
    sources.sort_unstable();
    sources.dedup();
    let column = |t: f64, x: usize| kernel.column(t, x);
    for &t in times {
        let mut cols = std::collections::BTreeMap::new();
        for &x in &sources {
            cols.insert(x, column(t, x)?);
        }
        for (&x, col) in &cols {
            let scale = col.iter().copied().fold(0.0, f64::max);
            let mass = compensated_sum(col.iter().zip(&w).map(|(p, m)| p * m));
            rep.mass_min = rep.mass_min.min(mass);
            rep.mass_max = rep.mass_max.max(mass);
            let neg = col.iter().copied().fold(0.0, f64::min);
            rep.positivity_violation = rep.positivity_violation.max(-neg / scale);
            let _ = x;
        }
        for &(x, y) in pairs {
            let (cx, cy) = (&cols[&x], &cols[&y]);
            let scale = cx.iter().copied().fold(0.0, f64::max);
            rep.symmetry_residual = rep.symmetry_residual.max((cx[y] - cy[x]).abs() / scale);
            if let Some(r) = reference {
                let rc = r.column(t, x)?;
                let floor = 1e-3 * rc.iter().copied().fold(0.0, f64::max);
                let mut worst = rep.cross_mode.unwrap_or(0.0);
                for z in 0..rc.len() {
                    if space.is_core(z) && rc[z] >= floor {
                        worst = worst.max((cx[z] - rc[z]).abs() / rc[z]);
                    }
                }
                rep.cross_mode = Some(worst);
            }
        }
        for &s in times {
            let joint: std::collections::BTreeMap<usize, Vec<f64>> = sources
                .iter()
                .map(|&x| column(t + s, x).map(|c| (x, c)))
                .collect::<Result<_>>()?;
            let cols_s: std::collections::BTreeMap<usize, Vec<f64>> = if s == t {
                cols.clone()
            } else {
                sources
                    .iter()
                    .map(|&x| column(s, x).map(|c| (x, c)))
                    .collect::<Result<_>>()?
            };
            for &(x, y) in pairs {
                let (px, py) = (&cols[&x], &cols_s[&y]);
                let conv = compensated_sum((0..w.len()).map(|z| px[z] * py[z] * w[z]));
                let jx = &joint[&x];
                let scale = jx.iter().copied().fold(0.0, f64::max);
                rep.semigroup_residual = rep.semigroup_residual.max((jx[y] - conv).abs() / scale);
            }
        }
    }
    Ok(rep)
}

/// Fitted constants of `1/(C₁ V) e^{-d²/3t - ct} ≤ p_t ≤ C₁/V e^{-d²/5t + ct}` and
/// `|∇p_t| ≤ C₁/(√t V) e^{-d²/5t + ct}` with `V = m(B(x, √t))`.
#[derive(Debug, Clone, Serialize)]
pub struct GaussianFit {
    pub c1: f64,
    pub c: f64,
    pub c1_lower: f64,
    pub c1_upper: f64,
    pub c1_gradient: f64,
    pub times_used: Vec<f64>,
    pub excluded_times: Vec<f64>,
    pub pairs_evaluated: usize,
    pub excluded_pairs: usize,
    pub window: (f64, f64),
}

struct Sample {
    t: f64,
    d2: f64,
    p: f64,
    grad: f64,
    vol: f64,
}

/// Fit `(C₁, c)` on core pairs over the resolvable window
/// `[4 h², core_radius²]`; `c` is the smallest candidate shift with `C₁ ≤ cap`.
pub fn fit_gaussian_bounds(
    kernel: &HeatKernel,
    times: &[f64],
    pairs: &[(usize, usize)],
    cap: f64,
) -> Result<GaussianFit> {
    let op = kernel.op();
    let space = op.space().clone();
    let h = op.resolution();
    let window = (4.0 * h * h, space.core_radius().powi(2));
    let (used, excluded): (Vec<f64>, Vec<f64>) = times
        .iter()
        .partition(|&&t| t >= window.0 * (1.0 - 1e-9) && t <= window.1 * (1.0 + 1e-9));
    let core_pairs: Vec<(usize, usize)> = pairs
        .iter()
        .copied()
        .filter(|&(x, y)| space.is_core(x) && space.is_core(y))
        .collect();
    let excluded_pairs = pairs.len() - core_pairs.len();
    if used.is_empty() || core_pairs.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no times ({}) or core pairs ({}) inside the resolvable window",
            used.len(),
            core_pairs.len()
        )));
    }
    let rule = GradientRule::default_for(&space);
    let mut sources: Vec<usize> = core_pairs.iter().map(|p| p.0).collect();
    sources.sort_unstable();
    sources.dedup();
    let mut samples = Vec::new();
    for &t in &used {
        for &x in &sources {
            let col = kernel.column(t, x)?;
            let grad = gradient_magnitude(&space, &col, rule);
            let vol = space.volume(x, t.sqrt());
            for &(_, y) in core_pairs.iter().filter(|p| p.0 == x) {
                let d = space.dist(x, y);
                samples.push(Sample {
                    t,
                    d2: d * d,
                    p: col[y],
                    grad: grad[y],
                    vol,
                });
            }
        }
    }
    let fit = |c: f64| {
        let (mut lo, mut hi, mut gr) = (1.0f64, 1.0f64, 1.0f64);
        for s in &samples {
            let lower = (-s.d2 / (3.0 * s.t) - c * s.t).exp() / (s.vol * s.p.max(0.0));
            let upper = s.p * s.vol * (s.d2 / (5.0 * s.t) - c * s.t).exp();
            let grad = s.grad * s.t.sqrt() * s.vol * (s.d2 / (5.0 * s.t) - c * s.t).exp();
            lo = lo.max(lower);
            hi = hi.max(upper);
            gr = gr.max(grad);
        }
        (lo, hi, gr)
    };
    for c in SHIFT_CANDIDATES {
        let (lo, hi, gr) = fit(c);
        let c1 = lo.max(hi).max(gr);
        if c1 <= cap {
            return Ok(GaussianFit {
                c1,
                c,
                c1_lower: lo,
                c1_upper: hi,
                c1_gradient: gr,
                times_used: used,
                excluded_times: excluded,
                pairs_evaluated: core_pairs.len(),
                excluded_pairs,
                window,
            });
        }
    }
    let (lo, hi, gr) = fit(*SHIFT_CANDIDATES.last().expect("nonempty"));
    Err(Error::GaussianBound(format!(
        "no finite C₁ below {cap:e} (lower {lo:e}, upper {hi:e}, gradient {gr:e} at largest shift)"
    )))
}
