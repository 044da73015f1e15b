//! Whitespace-separated columnar plot data (`x y series`), one file per
//! series, readable by gnuplot, numpy.loadtxt and the like.

use std::fs;
use std::path::{Path, PathBuf};

use crate::report::{Bundle, SeriesPoint};
use crate::{HarnessError, Result};

/// `G/F` against `d`.
pub const GREEN_RATIO: &str = "green_ratio";
/// `|∇G|/H` against `d`.
pub const GRADIENT_RATIO: &str = "gradient_ratio";
/// Counts of `Φ*` per bin; `x` is the left bin edge and the last row closes
/// the final bin with a zero count.
pub const PHI_STAR_HISTOGRAM: &str = "phi_star_histogram";
/// Fractions of `k̂` at the seeds (`before`) and at the flowed points
/// (`after`), on the same `k` values.
pub const DIMENSION_HISTOGRAM: &str = "dimension_histogram";
/// CD slack against `t`.
pub const CD_SLACK: &str = "cd_slack";

pub const KNOWN_SERIES: [&str; 5] = [
    GREEN_RATIO,
    GRADIENT_RATIO,
    PHI_STAR_HISTOGRAM,
    DIMENSION_HISTOGRAM,
    CD_SLACK,
];

/// Write `<name>.dat` into `dir` for every requested series; an empty list
/// selects every series in the bundle.
pub fn emit_plot_data(bundle: &Bundle, names: &[String], dir: &Path) -> Result<Vec<PathBuf>> {
    let selected: Vec<String> = if names.is_empty() {
        bundle.series.keys().cloned().collect()
    } else {
        names.to_vec()
    };
    let mut points = Vec::with_capacity(selected.len());
    for name in &selected {
        let data = bundle.series.get(name).ok_or_else(|| {
            let have: Vec<&str> = bundle.series.keys().map(String::as_str).collect();
            HarnessError::UnknownSeries(format!("{name} (bundle has: {})", have.join(", ")))
        })?;
        points.push((name, data));
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, data) in points {
        let path = dir.join(format!("{name}.dat"));
        fs::write(&path, format_series(data))?;
        written.push(path);
    }
    Ok(written)
}

/// Rows sorted by `x`, then by series label.
pub fn format_series(data: &[SeriesPoint]) -> String {
    let mut rows: Vec<&SeriesPoint> = data.iter().collect();
    rows.sort_by(|a, b| a.x.total_cmp(&b.x).then_with(|| a.series.cmp(&b.series)));
    let mut out = String::from("# x y series\n");
    for p in rows {
        out.push_str(&format!(
            "{:e} {:e} {}\n",
            p.x,
            p.y,
            p.series.replace(' ', "_")
        ));
    }
    out
}

/// Histogram of `values` over `bins` equal bins spanning their range.
pub fn histogram_series(values: &[f64], bins: usize, label: &str) -> Vec<SeriesPoint> {
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo {
        (hi - lo) / bins as f64
    } else {
        1.0
    };
    let mut counts = vec![0usize; bins];
    for v in finite {
        counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
    }
    let mut out: Vec<SeriesPoint> = counts
        .iter()
        .enumerate()
        .map(|(i, &c)| SeriesPoint {
            x: lo + i as f64 * width,
            y: c as f64,
            series: label.into(),
        })
        .collect();
    out.push(SeriesPoint {
        x: lo + bins as f64 * width,
        y: 0.0,
        series: label.into(),
    });
    out
}
