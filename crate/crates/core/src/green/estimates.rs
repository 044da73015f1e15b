//! Two-sided comparison of `G` with the volume integrals `F`, `H`, and the
//! heat-kernel integral `ψ` against its volume-law counterpart.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::GreenField;
use crate::linalg::median;
use crate::quadrature::{tail_integral, NODES_PER_DECADE};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct PairRatio {
    pub x: usize,
    pub y: usize,
    pub d: f64,
    pub f: f64,
    pub g: f64,
    /// `G / F`.
    pub ratio: f64,
    pub h: f64,
    pub grad: f64,
    /// `|∇G| / H`.
    pub grad_ratio: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GreenEstimateReport {
    /// Smallest `C₂` with `F/C₂ ≤ G ≤ C₂ F` and `|∇G| ≤ C₂ H` on the sample.
    pub c2: f64,
    /// `max F/G`.
    pub c2_low: f64,
    /// `max G/F`.
    pub c2_high: f64,
    /// `max |∇G|/H`.
    pub c2_gradient: f64,
    pub bounded: bool,
    pub ratio_min: f64,
    pub ratio_max: f64,
    pub ratio_median: f64,
    pub grad_ratio_min: f64,
    pub grad_ratio_max: f64,
    pub grad_ratio_median: f64,
    pub pairs: Vec<PairRatio>,
    /// Pairs dropped before fitting, with the reason.
    pub excluded: Vec<(usize, usize, String)>,
    /// Pairs whose ratio exceeds the cap.
    pub offending: Vec<(usize, usize)>,
}

/// Fit `C₂` over `pairs`. Every source needs a stitched `F`/`H` profile, so
/// the space must carry a tail model.
pub fn verify_green_estimates(
    field: &GreenField,
    pairs: &[(usize, usize)],
    cap: f64,
) -> Result<GreenEstimateReport> {
    let space = field.op().space().clone();
    if space.tail().is_none() {
        return Err(Error::NonParabolic(
            "no tail model declared, F and H undefined".into(),
        ));
    }
    let mut sources: Vec<usize> = pairs.iter().map(|p| p.0).collect();
    sources.sort_unstable();
    sources.dedup();
    field.ensure(&sources)?;
    let mut profiles = BTreeMap::new();
    for &x in &sources {
        profiles.insert(x, space.fh_profile(x));
    }
    let mut rows = Vec::new();
    let mut excluded = Vec::new();
    for &(x, y) in pairs {
        if !(space.is_core(x) && space.is_core(y)) || x == y {
            excluded.push((x, y, "not a pair of distinct core points".into()));
            continue;
        }
        let prof = match &profiles[&x] {
            Ok(p) => p,
            Err(e) => {
                excluded.push((x, y, e.to_string()));
                continue;
            }
        };
        let col = field.cached(x).expect("ensured");
        let g = col.values[y];
        if g <= 0.0 {
            excluded.push((x, y, format!("nonpositive G = {g:e}")));
            continue;
        }
        let d = space.dist(x, y);
        let (f, h) = (prof.f(d), prof.h(d));
        let grad = col.gradient[y];
        rows.push(PairRatio {
            x,
            y,
            d,
            f,
            g,
            ratio: g / f,
            h,
            grad,
            grad_ratio: grad / h,
        });
    }
    if rows.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no usable pairs ({} excluded)",
            excluded.len()
        )));
    }
    let (mut low, mut high, mut gr) = (1.0f64, 1.0f64, 1.0f64);
    let mut offending = Vec::new();
    for r in &rows {
        let worst = (1.0 / r.ratio).max(r.ratio).max(r.grad_ratio);
        if !(worst <= cap) {
            offending.push((r.x, r.y));
        }
        low = low.max(1.0 / r.ratio);
        high = high.max(r.ratio);
        gr = gr.max(r.grad_ratio);
    }
    let ratios: Vec<f64> = rows.iter().map(|r| r.ratio).collect();
    let grads: Vec<f64> = rows.iter().map(|r| r.grad_ratio).collect();
    let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(GreenEstimateReport {
        c2: low.max(high).max(gr),
        c2_low: low,
        c2_high: high,
        c2_gradient: gr,
        bounded: offending.is_empty(),
        ratio_min: min(&ratios),
        ratio_max: max(&ratios),
        ratio_median: median(&ratios),
        grad_ratio_min: min(&grads),
        grad_ratio_max: max(&grads),
        grad_ratio_median: median(&grads),
        pairs: rows,
        excluded,
        offending,
    })
}

/// Per-pair table with columns `x, y, d, F, G, ratio`.
pub fn write_ratio_csv<W: Write>(out: W, report: &GreenEstimateReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "d", "F", "G", "ratio"])?;
    for r in &report.pairs {
        w.write_record([
            r.x.to_string(),
            r.y.to_string(),
            format!("{:e}", r.d),
            format!("{:e}", r.f),
            format!("{:e}", r.g),
            format!("{:e}", r.ratio),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct PsiReport {
    pub radii: Vec<f64>,
    /// `ψ(r) / ∫_r^∞ s/φ(s) ds`.
    pub ratios: Vec<f64>,
    pub min: f64,
    pub max: f64,
}

/// Compare `ψ(r) = ∫_0^∞ e^{-r²/t} / φ(√t) dt` with `∫_r^∞ s/φ(s) ds` on a
/// radius grid.
pub fn psi_tail_comparison(phi: impl Fn(f64) -> f64, radii: &[f64]) -> Result<PsiReport> {
    if radii.is_empty() || radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidParameter("radii must be positive".into()));
    }
    let mut ratios = Vec::with_capacity(radii.len());
    for &r in radii {
        let r2 = r * r;
        // Below r²/400 the factor e^{-r²/t} is under e^{-400}.
        let psi = tail_integral(
            |t| (-r2 / t).exp() / phi(t.sqrt()),
            r2 / 400.0,
            NODES_PER_DECADE,
        )
        .map_err(|e| {
            Error::NonParabolic(format!(
                "ψ({r}) diverges: integrand decays like t^-{:.3}",
                e.exponent
            ))
        })?;
        let tail = tail_integral(|s| s / phi(s), r, NODES_PER_DECADE).map_err(|e| {
            Error::NonParabolic(format!(
                "∫ s/φ(s) diverges beyond {r}: integrand decays like s^-{:.3}",
                e.exponent
            ))
        })?;
        ratios.push(psi / tail);
    }
    let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
    let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(PsiReport {
        radii: radii.to_vec(),
        ratios,
        min,
        max,
    })
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;
    use std::sync::Arc;

    use super::*;
    use crate::heat::{assemble_laplacian, Grounding};
    use crate::space::{build_grid_space, MeasureLaw};
    use crate::unit_ball_volume;

    fn log_grid(a: f64, b: f64, n: usize) -> Vec<f64> {
        (0..n)
            .map(|i| a * (b / a).powf(i as f64 / (n - 1) as f64))
            .collect()
    }

    #[test]
    fn psi_ratio_three_dimensions() {
        let w3 = unit_ball_volume(3);
        let rep = psi_tail_comparison(|s| w3 * s.powi(3), &log_grid(0.1, 10.0, 21)).unwrap();
        let root_pi = PI.sqrt();
        assert!(
            (rep.min - root_pi).abs() < 1e-4 && (rep.max - root_pi).abs() < 1e-4,
            "{rep:?}"
        );
    }

    #[test]
    fn psi_ratio_four_dimensions_is_constant() {
        // ψ = 1/(ω₄ r²), tail = 1/(2 ω₄ r²).
        let w4 = unit_ball_volume(4);
        let rep = psi_tail_comparison(|s| w4 * s.powi(4), &log_grid(0.1, 10.0, 11)).unwrap();
        assert!(rep.max - rep.min < 1e-6);
        assert!((rep.min - 2.0).abs() < 1e-6, "{rep:?}");
    }

    #[test]
    fn psi_diverges_for_bounded_volume() {
        assert!(matches!(
            psi_tail_comparison(|_| 1.0, &[1.0]),
            Err(Error::NonParabolic(_))
        ));
    }

    #[test]
    fn r3_ratios_near_closed_forms() {
        let s = Arc::new(build_grid_space(3, 21, 0.1, MeasureLaw::Lebesgue).unwrap());
        let op = Arc::new(assemble_laplacian(s.clone(), Grounding::Dirichlet).unwrap());
        let field = GreenField::new(op, 0.0, 0.0).unwrap();
        let x = s.centre();
        let pairs: Vec<(usize, usize)> = [4usize, 5, 6, 21 * 3 + 3, 21 * 21 * 4 + 2 * 21]
            .iter()
            .map(|&o| (x, x + o))
            .collect();
        let rep = verify_green_estimates(&field, &pairs, 1e6).unwrap();
        assert!(rep.excluded.is_empty(), "{:?}", rep.excluded);
        for r in &rep.pairs {
            assert!((r.ratio - 1.0 / 3.0).abs() < 0.05, "{r:?}");
            assert!((r.grad_ratio - 2.0 / 3.0).abs() < 0.12, "{r:?}");
        }
        assert!(rep.c2 >= 2.7 && rep.c2 <= 4.0);
        let mut buf = Vec::new();
        write_ratio_csv(&mut buf, &rep).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,y,d,F,G,ratio\n"));
        assert_eq!(text.lines().count(), 6);
    }
}
