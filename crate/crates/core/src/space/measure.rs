//! Balls, volume growth and the tail integrals
//! `F(x, r) = ∫_r^∞ s / m(B(x, s)) ds` and `H(x, r) = ∫_r^∞ 1 / m(B(x, s)) ds`.

use serde::Serialize;

use super::{in_open_ball, Backend, MmSpace, TailModel};
use crate::quadrature::{tail_integral, NODES_PER_DECADE};
use crate::{Error, Result};

/// Empirical volumes are used up to this fraction of the boundary distance.
pub const STITCH_FRACTION: f64 = 0.8;

/// Largest admissible relative mismatch between empirical and model volume at
/// the stitching radius.
pub const STITCH_TOLERANCE: f64 = 0.05;

/// `m(B(x, r))` on a radius grid.
#[derive(Debug, Clone, Serialize)]
pub struct VolumeProfile {
    pub center: usize,
    pub radii: Vec<f64>,
    pub volumes: Vec<f64>,
}

/// Right-continuous step description of `s -> m(B(x, s))` on the sampled range:
/// for `radii[k] < s <= radii[k + 1]` the volume is `cum[k]`.
#[derive(Debug, Clone)]
pub struct StepProfile {
    pub radii: Vec<f64>,
    pub cum: Vec<f64>,
}

impl StepProfile {
    pub fn volume(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        let k = self.radii.partition_point(|&r| in_open_ball(r, s));
        if k == 0 {
            0.0
        } else {
            self.cum[k - 1]
        }
    }

    /// `∫_a^b g(s, V(s)) ds` where `g` has the closed-form antiderivative
    /// `prim(b) - prim(a)` divided by `V` on each constant piece.
    fn integrate(&self, a: f64, b: f64, prim: impl Fn(f64) -> f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let mut total = 0.0;
        let mut k = self.radii.partition_point(|&r| r <= a).max(1);
        let mut lo = a;
        while lo < b {
            let hi = if k < self.radii.len() {
                self.radii[k].min(b)
            } else {
                b
            };
            if hi > lo {
                total += (prim(hi) - prim(lo)) / self.cum[k - 1];
            }
            lo = hi;
            k += 1;
        }
        total
    }

    /// `∫_a^b s / V(s) ds`.
    pub fn integral_f(&self, a: f64, b: f64) -> f64 {
        self.integrate(a, b, |s| 0.5 * s * s)
    }

    /// `∫_a^b 1 / V(s) ds`.
    pub fn integral_h(&self, a: f64, b: f64) -> f64 {
        self.integrate(a, b, |s| s)
    }
}

/// Evaluator of `F(x, ·)` and `H(x, ·)`: exact integration of the empirical
/// step profile up to the stitching radius, model tail beyond.
#[derive(Debug, Clone)]
pub struct FhProfile {
    pub center: usize,
    pub stitch_radius: f64,
    /// Relative mismatch between empirical and model volume at the stitch.
    pub mismatch: f64,
    step: StepProfile,
    tail: TailModel,
    f_tail: f64,
    h_tail: f64,
}

impl FhProfile {
    fn model_f(&self, r: f64) -> f64 {
        let t = self.tail;
        tail_integral(|s| s / t.volume(s), r, NODES_PER_DECADE).unwrap_or(f64::INFINITY)
    }

    fn model_h(&self, r: f64) -> f64 {
        let t = self.tail;
        tail_integral(|s| 1.0 / t.volume(s), r, NODES_PER_DECADE).unwrap_or(f64::INFINITY)
    }

    pub fn f(&self, r: f64) -> f64 {
        if r >= self.stitch_radius {
            self.model_f(r)
        } else {
            self.step.integral_f(r.max(0.0), self.stitch_radius) + self.f_tail
        }
    }

    pub fn h(&self, r: f64) -> f64 {
        if r >= self.stitch_radius {
            self.model_h(r)
        } else {
            self.step.integral_h(r.max(0.0), self.stitch_radius) + self.h_tail
        }
    }

    /// Stitched volume profile used by `f` and `h`.
    pub fn volume(&self, s: f64) -> f64 {
        if s > self.stitch_radius {
            self.tail.volume(s)
        } else {
            self.step.volume(s)
        }
    }

    pub fn tabulate(&self, radii: &[f64]) -> (Vec<f64>, Vec<f64>) {
        (
            radii.iter().map(|&r| self.f(r)).collect(),
            radii.iter().map(|&r| self.h(r)).collect(),
        )
    }
}

/// Residuals of the two ball-integral identities of `F` and `H`.
#[derive(Debug, Clone, Serialize)]
pub struct IdentityReport {
    pub center: usize,
    pub radius: f64,
    pub f_lhs: f64,
    pub f_rhs: f64,
    pub f_residual: f64,
    pub h_lhs: f64,
    pub h_rhs: f64,
    pub h_residual: f64,
}

/// Doubling, Bishop-Gromov and reverse-doubling diagnostics.
#[derive(Debug, Clone, Serialize)]
pub struct DoublingReport {
    pub radii: Vec<f64>,
    pub points: Vec<usize>,
    /// `ratios[p][k] = m(B(x_p, 2 r_k)) / m(B(x_p, r_k))`.
    pub ratios: Vec<Vec<f64>>,
    pub max_ratio: f64,
    /// Model exponent `N` used in `r -> m(B(x, r)) / r^N`.
    pub model_exponent: f64,
    /// Largest relative increase of `m(B(x, r)) / r^N` between consecutive radii
    /// (zero when the quotient is nonincreasing).
    pub bishop_gromov_max_increase: f64,
    /// Smallest `ratio / bound` of the reverse inequality over sampled `R > r`
    /// (at least 1 when it holds), present for declared product spaces.
    pub reverse_min_margin: Option<f64>,
}

impl MmSpace {
    /// Largest radius for which balls about `x` are fully sampled.
    pub fn sampled_radius(&self, x: usize) -> f64 {
        match &self.backend {
            Backend::Grid { lattice, .. } => {
                (lattice.clearance_units(x) + 1) as f64 * lattice.spacing
            }
            _ => self.clearance(x),
        }
    }

    /// Visit every `(y, d(x, y))` with `d(x, y) < r`, in increasing index order.
    pub fn for_each_in_ball(&self, x: usize, r: f64, mut visit: impl FnMut(usize, f64)) {
        if r <= 0.0 {
            return;
        }
        match &self.backend {
            Backend::Grid { lattice, .. } => {
                let n = lattice.dim;
                let rho = r / lattice.spacing;
                let m = rho.ceil() as i64;
                let mut base = [0usize; 6];
                lattice.multi_index(x, &mut base[..n]);
                let lo: Vec<i64> = (0..n).map(|k| (base[k] as i64 - m).max(0)).collect();
                let hi: Vec<i64> = (0..n)
                    .map(|k| (base[k] as i64 + m).min(lattice.side as i64 - 1))
                    .collect();
                let mut cur = lo.clone();
                loop {
                    let sq: i64 = (0..n).map(|k| (cur[k] - base[k] as i64).pow(2)).sum();
                    let d = lattice.spacing * (sq as f64).sqrt();
                    if in_open_ball(d, r) {
                        // cur[0] is the fastest axis, so indices increase.
                        visit(lattice.index_signed(&cur).expect("inside box"), d);
                    }
                    let mut k = 0;
                    loop {
                        if k == n {
                            return;
                        }
                        if cur[k] < hi[k] {
                            cur[k] += 1;
                            break;
                        }
                        cur[k] = lo[k];
                        k += 1;
                    }
                }
            }
            _ => {
                for y in 0..self.len() {
                    let d = self.dist(x, y);
                    if in_open_ball(d, r) {
                        visit(y, d);
                    }
                }
            }
        }
    }

    /// `B(x, r) = {y : d(x, y) < r}`, sorted by index.
    pub fn ball(&self, x: usize, r: f64) -> Vec<usize> {
        let mut out = Vec::new();
        self.for_each_in_ball(x, r, |y, _| out.push(y));
        out
    }

    /// Sum of the weights of the sampled points in `B(x, r)`.
    pub fn empirical_volume(&self, x: usize, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        if let (Backend::Grid { lattice, shells }, true) =
            (&self.backend, r <= self.sampled_radius(x))
        {
            return shells.count_open(r / lattice.spacing) as f64 * self.weight(x);
        }
        let mut acc = Vec::new();
        self.for_each_in_ball(x, r, |y, _| acc.push(self.weight(y)));
        crate::linalg::compensated_sum(acc)
    }

    /// `m(B(x, r))`, with the tail model substituted beyond the sampled radius.
    pub fn volume(&self, x: usize, r: f64) -> f64 {
        if r <= 0.0 {
            return 0.0;
        }
        match self.tail {
            Some(t) if r > self.sampled_radius(x) => t.volume(r),
            _ => self.empirical_volume(x, r),
        }
    }

    pub fn volume_profile(&self, x: usize, radii: &[f64]) -> VolumeProfile {
        VolumeProfile {
            center: x,
            radii: radii.to_vec(),
            volumes: radii.iter().map(|&r| self.volume(x, r)).collect(),
        }
    }

    /// Step profile of `s -> m(B(x, s))` for `s <= rmax`, which must lie
    /// within the sampled radius.
    pub fn step_profile(&self, x: usize, rmax: f64) -> StepProfile {
        let mut radii = Vec::new();
        let mut cum = Vec::new();
        match &self.backend {
            Backend::Grid { lattice, shells } => {
                let w = self.weight(x);
                let lim = (rmax / lattice.spacing).powi(2);
                for (s, c) in shells.shells() {
                    if s as f64 > lim * (1.0 + 1e-12) {
                        break;
                    }
                    radii.push(lattice.spacing * (s as f64).sqrt());
                    cum.push(c as f64 * w);
                }
            }
            _ => {
                let mut pts: Vec<(f64, f64)> = (0..self.len())
                    .map(|y| (self.dist(x, y), self.weight(y)))
                    .filter(|&(d, _)| d <= rmax)
                    .collect();
                pts.sort_by(|a, b| a.0.total_cmp(&b.0));
                let mut total = 0.0;
                for (d, w) in pts {
                    total += w;
                    if radii
                        .last()
                        .is_some_and(|&r: &f64| (d - r).abs() <= 1e-12 * d.max(1.0))
                    {
                        *cum.last_mut().unwrap() = total;
                    } else {
                        radii.push(d);
                        cum.push(total);
                    }
                }
            }
        }
        StepProfile { radii, cum }
    }

    /// Radius up to which empirical volumes are trusted for tail integrals.
    pub fn stitch_radius(&self, x: usize) -> f64 {
        let c = self.clearance(x);
        if c.is_finite() {
            super::measure::STITCH_FRACTION * c
        } else {
            let far = (0..self.len()).map(|y| self.dist(x, y)).fold(0.0, f64::max);
            STITCH_FRACTION * far
        }
    }

    /// Tail integrals `F(x, ·)`, `H(x, ·)` stitched to the model tail.
    pub fn fh_profile(&self, x: usize) -> Result<FhProfile> {
        let tail = self.tail.ok_or_else(|| {
            Error::NonParabolic("no tail model declared, tail integrals undefined".into())
        })?;
        if tail.exponent <= 2.0 {
            return Err(Error::NonParabolic(format!(
                "volume growth exponent {} makes ∫ s/m(B(x,s)) ds diverge",
                tail.exponent
            )));
        }
        let s_star = self.stitch_radius(x);
        let step = self.step_profile(x, s_star);
        let v_emp = step.volume(s_star);
        let v_model = tail.volume(s_star);
        let mismatch = (v_emp - v_model).abs() / v_model;
        if !(mismatch <= STITCH_TOLERANCE) {
            return Err(Error::StitchMismatch {
                radius: s_star,
                mismatch,
            });
        }
        let f_tail = tail_integral(|s| s / tail.volume(s), s_star, NODES_PER_DECADE)
            .map_err(|d| Error::NonParabolic(format!("F tail diverges (decay {})", d.exponent)))?;
        let h_tail = tail_integral(|s| 1.0 / tail.volume(s), s_star, NODES_PER_DECADE)
            .map_err(|d| Error::NonParabolic(format!("H tail diverges (decay {})", d.exponent)))?;
        Ok(FhProfile {
            center: x,
            stitch_radius: s_star,
            mismatch,
            step,
            tail,
            f_tail,
            h_tail,
        })
    }

    /// `F(x, r)` and `H(x, r)` on a radius grid.
    pub fn f_h_profiles(&self, x: usize, radii: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok(self.fh_profile(x)?.tabulate(radii))
    }

    /// Residuals of `∫_{B(x,R)} F_x dm = R²/2 + F_x(R) m(B(x,R))` and
    /// `∫_{B(x,R)} H_x dm = R + H_x(R) m(B(x,R))`.
    pub fn verify_integral_identities(&self, x: usize, radius: f64) -> Result<IdentityReport> {
        let fh = self.fh_profile(x)?;
        let sampled = self.sampled_radius(x);
        if radius > sampled {
            return Err(Error::RadiusOutOfRange { radius, sampled });
        }
        // Group ball points by distance: F and H depend only on d(x, y).
        let ball = self.step_profile(x, radius);
        let (mut f_lhs, mut h_lhs, mut prev) = (0.0, 0.0, 0.0);
        for (r, c) in ball.radii.iter().zip(&ball.cum) {
            if !in_open_ball(*r, radius) {
                break;
            }
            let mass = c - prev;
            prev = *c;
            f_lhs += mass * fh.f(*r);
            h_lhs += mass * fh.h(*r);
        }
        let vol = prev;
        let f_rhs = 0.5 * radius * radius + fh.f(radius) * vol;
        let h_rhs = radius + fh.h(radius) * vol;
        let rel = |a: f64, b: f64| {
            if b == 0.0 {
                (a - b).abs()
            } else {
                (a - b).abs() / b
            }
        };
        Ok(IdentityReport {
            center: x,
            radius,
            f_lhs,
            f_rhs,
            f_residual: rel(f_lhs, f_rhs),
            h_lhs,
            h_rhs,
            h_residual: rel(h_lhs, h_rhs),
        })
    }

    /// Doubling ratios `m(B(x,2r))/m(B(x,r))`, the Bishop-Gromov quotient
    /// `m(B(x,r))/r^N` and, for declared products `Y x R^k`, the reverse bound
    /// `m(B(x,R))/m(B(x,r)) >= (R/r)^k / (C sqrt(2)^k)`.
    pub fn doubling_profile(
        &self,
        radii: &[f64],
        points: &[usize],
        model_exponent: Option<f64>,
    ) -> Result<DoublingReport> {
        if self.tail.is_none() {
            for &x in points {
                let sampled = self.sampled_radius(x);
                if let Some(&r) = radii.iter().find(|&&r| 2.0 * r > sampled) {
                    return Err(Error::RadiusOutOfRange {
                        radius: 2.0 * r,
                        sampled,
                    });
                }
            }
        }
        let n = model_exponent
            .or(self.tail.map(|t| t.exponent))
            .ok_or_else(|| Error::InvalidParameter("no model exponent available".into()))?;
        let mut ratios = Vec::with_capacity(points.len());
        let mut max_ratio = 0.0f64;
        let mut bg = 0.0f64;
        let mut reverse: Option<f64> = None;
        for &x in points {
            let vols: Vec<f64> = radii.iter().map(|&r| self.volume(x, r)).collect();
            let row: Vec<f64> = radii
                .iter()
                .zip(&vols)
                .map(|(&r, &v)| self.volume(x, 2.0 * r) / v)
                .collect();
            max_ratio = row.iter().copied().fold(max_ratio, f64::max);
            ratios.push(row);
            for k in 1..radii.len() {
                let q0 = vols[k - 1] / radii[k - 1].powf(n);
                let q1 = vols[k] / radii[k].powf(n);
                bg = bg.max((q1 - q0) / q0);
            }
            if let Some(f) = self.factor {
                let kf = f.k as i32;
                for i in 0..radii.len() {
                    for j in i + 1..radii.len() {
                        let bound = (radii[j] / radii[i]).powi(kf)
                            / (f.base_doubling * 2f64.sqrt().powi(kf));
                        let m = vols[j] / vols[i] / bound;
                        reverse = Some(reverse.map_or(m, |r| r.min(m)));
                    }
                }
            }
        }
        Ok(DoublingReport {
            radii: radii.to_vec(),
            points: points.to_vec(),
            ratios,
            max_ratio,
            model_exponent: n,
            bishop_gromov_max_increase: bg,
            reverse_min_margin: reverse,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::{build_graph_space, build_grid_space, EuclideanFactor, MeasureLaw};
    use super::*;
    use crate::unit_ball_volume;

    #[test]
    fn empty_ball() {
        let s = build_grid_space(2, 7, 1.0, MeasureLaw::Lebesgue).unwrap();
        assert!(s.ball(s.centre(), 0.0).is_empty());
        assert_eq!(s.volume(s.centre(), 0.0), 0.0);
    }

    #[test]
    fn grid_ball_volume() {
        let s = build_grid_space(3, 21, 0.1, MeasureLaw::Lebesgue).unwrap();
        let c = s.centre();
        let v = s.volume(c, 0.3);
        // Direct cell count oracle: lattice vectors with |v| < 3.
        let mut count = 0;
        for a in -3i32..=3 {
            for b in -3i32..=3 {
                for d in -3i32..=3 {
                    if a * a + b * b + d * d < 9 {
                        count += 1;
                    }
                }
            }
        }
        assert!((v - count as f64 * 1e-3).abs() < 1e-12);
        // The open ball of radius 5h misses the 30 lattice points on the
        // sphere; the closed ball sits within 5% of the analytic volume.
        let v5 = s.volume(c, 0.5);
        assert!((v5 - 0.485).abs() < 1e-12);
        let closed = s.volume(c, 0.5 * (1.0 + 1e-9));
        assert!((closed / (unit_ball_volume(3) * 0.125) - 1.0).abs() < 0.05);
        assert_eq!(s.ball(c, 0.5).len(), 485);
    }

    #[test]
    fn path_graph_ball() {
        let g = build_graph_space(3, &[(0, 1, 1.0), (1, 2, 1.0)], &[0.5, 1.0, 2.0]).unwrap();
        assert_eq!(g.ball(1, 1.5), vec![0, 1, 2]);
        assert_eq!(g.volume(1, 1.5), 3.5);
        assert_eq!(g.ball(1, 1.0), vec![1]);
    }

    #[test]
    fn step_profile_matches_volume() {
        let s = build_grid_space(3, 15, 0.1, MeasureLaw::Lebesgue).unwrap();
        let c = s.centre();
        let p = s.step_profile(c, 0.6);
        for r in [0.05, 0.1, 0.1000001, 0.25, 0.3, 0.55, 0.6] {
            assert_eq!(p.volume(r), s.volume(c, r), "r = {r}");
        }
    }

    #[test]
    fn step_integrals_exact() {
        let p = StepProfile {
            radii: vec![0.0, 1.0, 2.0],
            cum: vec![1.0, 3.0, 6.0],
        };
        // ∫_0^3 s/V = 1/2 + (4-1)/2/3 + (9-4)/2/6
        let want = 0.5 + 0.5 + 5.0 / 12.0;
        assert!((p.integral_f(0.0, 3.0) - want).abs() < 1e-15);
        assert!((p.integral_h(0.5, 1.5) - (0.5 + 0.5 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn f_and_h_on_r3() {
        let s = build_grid_space(3, 21, 0.1, MeasureLaw::Lebesgue).unwrap();
        let fh = s.fh_profile(s.centre()).unwrap();
        use std::f64::consts::PI;
        let f = fh.f(0.5);
        let h = fh.h(0.5);
        assert!((f / (3.0 / (4.0 * PI * 0.5)) - 1.0).abs() < 0.02, "F = {f}");
        assert!(
            (h / (3.0 / (8.0 * PI * 0.25)) - 1.0).abs() < 0.02,
            "H = {h}"
        );
        assert!(fh.f(0.3) > f && fh.h(0.3) > h);
    }

    #[test]
    fn non_parabolic_rejected() {
        let s = build_grid_space(2, 21, 0.1, MeasureLaw::Lebesgue).unwrap();
        let err = s.fh_profile(s.centre()).unwrap_err();
        assert!(err
            .to_string()
            .contains("non-parabolic assumption violated"));
        let g = build_graph_space(2, &[(0, 1, 1.0)], &[1.0; 2]).unwrap();
        assert!(matches!(g.fh_profile(0), Err(Error::NonParabolic(_))));
    }

    #[test]
    fn identities_on_r3_and_r4() {
        let s3 = build_grid_space(3, 21, 0.1, MeasureLaw::Lebesgue).unwrap();
        let r3 = s3.verify_integral_identities(s3.centre(), 0.6).unwrap();
        assert!(r3.f_residual <= 0.02 && r3.h_residual <= 0.02, "{r3:?}");
        let s4 = build_grid_space(4, 15, 0.1, MeasureLaw::Lebesgue).unwrap();
        let r4 = s4.verify_integral_identities(s4.centre(), 0.5).unwrap();
        assert!(r4.f_residual <= 0.02 && r4.h_residual <= 0.02, "{r4:?}");
        let small = s3.verify_integral_identities(s3.centre(), 1e-6).unwrap();
        // Only the centre remains; both sides reduce to m_x F_x(0).
        assert!(
            small.f_residual < 1e-9 && small.h_residual < 1e-9,
            "{small:?}"
        );
    }

    #[test]
    fn doubling_on_grids() {
        let s3 = build_grid_space(3, 31, 0.1, MeasureLaw::Lebesgue).unwrap();
        let rep = s3
            .doubling_profile(&[0.4, 0.5, 0.6], &[s3.centre()], None)
            .unwrap();
        assert!(
            (rep.max_ratio / 8.0 - 1.0).abs() < 0.15,
            "{}",
            rep.max_ratio
        );
        let s1 = build_grid_space(1, 101, 0.1, MeasureLaw::Lebesgue).unwrap();
        let rep = s1
            .doubling_profile(&[1.0, 2.0], &[s1.centre()], None)
            .unwrap();
        // 39 / 19 lattice points: open-ball discretisation of the ratio 2.
        assert!((rep.max_ratio - 2.0).abs() < 0.06, "{}", rep.max_ratio);
        let s4 = build_grid_space(4, 17, 0.1, MeasureLaw::Lebesgue)
            .unwrap()
            .with_factor(EuclideanFactor {
                k: 1,
                base_doubling: 8.0,
            });
        let rep = s4
            .doubling_profile(&[0.2, 0.3, 0.4], &[s4.centre()], None)
            .unwrap();
        assert!(rep.reverse_min_margin.unwrap() >= 1.0);
    }

    #[test]
    fn doubling_needs_tail_or_range() {
        let g = build_graph_space(3, &[(0, 1, 1.0), (1, 2, 1.0)], &[1.0; 3]).unwrap();
        // No boundary: everything is sampled.
        assert!(g.doubling_profile(&[0.5], &[1], Some(1.0)).is_ok());
        let s = build_grid_space(3, 11, 0.1, MeasureLaw::Lebesgue)
            .unwrap()
            .with_tail(None);
        assert!(matches!(
            s.doubling_profile(&[0.4], &[s.centre()], None),
            Err(Error::RadiusOutOfRange { .. }) | Err(Error::InvalidParameter(_))
        ));
    }
}
