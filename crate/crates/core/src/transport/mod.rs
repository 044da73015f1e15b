//! Exact discrete optimal transport with quadratic cost, displacement
//! interpolation, geodesic drift fields and the entropy-convexity check of
//! the curvature-dimension condition.

mod simplex;

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::flow::{integrate_points, make_field, FieldKind, VectorFieldSpec};
use crate::space::{distortion_coefficients, MmSpace};
use crate::{Error, Result};

/// Largest support handled by the exact solver.
pub const MAX_SUPPORT: usize = 1000;

/// Finite measure on points of a space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteMeasure {
    pub points: Vec<usize>,
    pub masses: Vec<f64>,
}

impl DiscreteMeasure {
    /// Uniform probability measure on `points`.
    pub fn uniform(points: Vec<usize>) -> Self {
        let m = 1.0 / points.len() as f64;
        let masses = vec![m; points.len()];
        Self { points, masses }
    }

    pub fn total(&self) -> f64 {
        self.masses.iter().sum()
    }
}

/// Optimal plan between two atomic measures.
#[derive(Debug, Clone, Serialize)]
pub struct TransportPlan {
    /// Ambient dimension; 0 for spaces without coordinates.
    pub dim: usize,
    /// Point ids of the atoms (positions in the list for ambient clouds).
    pub source_ids: Vec<usize>,
    pub target_ids: Vec<usize>,
    /// Flattened ambient coordinates, empty without coordinates.
    pub source_coords: Vec<f64>,
    pub target_coords: Vec<f64>,
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    /// `(source index, target index, mass)` with positive mass.
    pub entries: Vec<(usize, usize, f64)>,
    /// `W₂²`.
    pub cost: f64,
    /// Dual potentials.
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub duality_gap: f64,
    pub dual_infeasibility: f64,
    pub iterations: usize,
}

impl TransportPlan {
    pub fn w2(&self) -> f64 {
        self.cost.max(0.0).sqrt()
    }

    fn source(&self, i: usize) -> &[f64] {
        &self.source_coords[i * self.dim..(i + 1) * self.dim]
    }

    fn target(&self, j: usize) -> &[f64] {
        &self.target_coords[j * self.dim..(j + 1) * self.dim]
    }

    fn require_coords(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Precondition(
                "plan has no ambient coordinates".into(),
            ));
        }
        Ok(())
    }
}

fn check_masses(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidParameter("empty measure".into()));
    }
    if a.len() > MAX_SUPPORT || b.len() > MAX_SUPPORT {
        return Err(Error::InvalidParameter(format!(
            "supports {} and {} exceed the exact-solver limit {MAX_SUPPORT}",
            a.len(),
            b.len()
        )));
    }
    if let Some(x) = a.iter().chain(b).find(|x| !(**x >= 0.0 && x.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "mass {x} is not finite nonnegative"
        )));
    }
    let (sa, sb): (f64, f64) = (a.iter().sum(), b.iter().sum());
    if !((sa - sb).abs() <= 1e-10 * sa.max(sb).max(1.0)) || !(sa > 0.0) {
        return Err(Error::MassMismatch(sa, sb));
    }
    // Remove the rounding-level mismatch so the problem is balanced.
    Ok(b.iter().map(|x| x * sa / sb).collect())
}

fn build_plan(
    cost: &[f64],
    a: &[f64],
    b: &[f64],
    ids: (Vec<usize>, Vec<usize>),
    coords: (Vec<f64>, Vec<f64>),
    dim: usize,
) -> Result<TransportPlan> {
    let b = check_masses(a, b)?;
    let s = simplex::solve(cost, a, &b)?;
    let mut entries: Vec<(usize, usize, f64)> =
        s.basis.iter().copied().filter(|e| e.2 > 0.0).collect();
    entries.sort_by(|p, q| (p.0, p.1).cmp(&(q.0, q.1)));
    Ok(TransportPlan {
        dim,
        source_ids: ids.0,
        target_ids: ids.1,
        source_coords: coords.0,
        target_coords: coords.1,
        mu0: a.to_vec(),
        mu1: b,
        entries,
        cost: s.cost,
        duality_gap: (s.cost - s.dual).abs(),
        dual_infeasibility: s.dual_infeasibility,
        u: s.u,
        v: s.v,
        iterations: s.iterations,
    })
}

/// Optimal plan for the cost `d²` of the space.
pub fn solve_w2(
    space: &MmSpace,
    mu0: &DiscreteMeasure,
    mu1: &DiscreteMeasure,
) -> Result<TransportPlan> {
    for m in [mu0, mu1] {
        if m.points.len() != m.masses.len() {
            return Err(Error::InvalidParameter(
                "points and masses differ in length".into(),
            ));
        }
        if let Some(&p) = m.points.iter().find(|&&p| p >= space.len()) {
            return Err(Error::InvalidParameter(format!(
                "point {p} outside the space"
            )));
        }
    }
    let (m, n) = (mu0.points.len(), mu1.points.len());
    let mut cost = vec![0.0; m * n];
    for (i, &x) in mu0.points.iter().enumerate() {
        for (j, &y) in mu1.points.iter().enumerate() {
            cost[i * n + j] = space.dist(x, y).powi(2);
        }
    }
    let dim = space.ambient_dim().unwrap_or(0);
    let coords = |pts: &[usize]| -> Vec<f64> {
        if dim == 0 {
            Vec::new()
        } else {
            pts.iter()
                .flat_map(|&p| space.coords(p).expect("ambient"))
                .collect()
        }
    };
    build_plan(
        &cost,
        &mu0.masses,
        &mu1.masses,
        (mu0.points.clone(), mu1.points.clone()),
        (coords(&mu0.points), coords(&mu1.points)),
        dim,
    )
}

/// Optimal plan between atomic measures at ambient positions (flattened,
/// `dim` coordinates each) with Euclidean squared cost.
pub fn solve_w2_points(
    x0: &[f64],
    a: &[f64],
    x1: &[f64],
    b: &[f64],
    dim: usize,
) -> Result<TransportPlan> {
    if dim == 0 || x0.len() != a.len() * dim || x1.len() != b.len() * dim {
        return Err(Error::InvalidParameter(
            "coordinates do not match masses".into(),
        ));
    }
    let (m, n) = (a.len(), b.len());
    let mut cost = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            cost[i * n + j] = (0..dim)
                .map(|k| (x0[i * dim + k] - x1[j * dim + k]).powi(2))
                .sum();
        }
    }
    build_plan(
        &cost,
        a,
        b,
        ((0..m).collect(), (0..n).collect()),
        (x0.to_vec(), x1.to_vec()),
        dim,
    )
}

/// Atomic measure at ambient positions.
#[derive(Debug, Clone, Serialize)]
pub struct AtomicMeasure {
    pub dim: usize,
    pub positions: Vec<f64>,
    pub masses: Vec<f64>,
}

/// `μ_t`: mass `π_ij` at `(1-t) x_i + t x_j`, with the largest density
/// relative to `m` after binning atoms to their nearest lattice cell.
#[derive(Debug, Clone, Serialize)]
pub struct Interpolant {
    pub t: f64,
    pub measure: AtomicMeasure,
    pub max_density_ratio: f64,
}

pub fn mccann_interpolate(space: &MmSpace, plan: &TransportPlan, t: f64) -> Result<Interpolant> {
    plan.require_coords()?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("t = {t} outside [0, 1]")));
    }
    let measure = interpolate_atoms(plan, t);
    let mut binned: HashMap<usize, f64> = HashMap::new();
    for (p, &m) in measure
        .positions
        .chunks_exact(plan.dim)
        .zip(&measure.masses)
    {
        let k = space
            .nearest_point(p)
            .ok_or_else(|| Error::Precondition("space has no coordinates".into()))?;
        *binned.entry(k).or_default() += m;
    }
    let max_density_ratio = binned
        .iter()
        .map(|(&k, &m)| m / space.weight(k))
        .fold(0.0, f64::max);
    Ok(Interpolant {
        t,
        measure,
        max_density_ratio,
    })
}

fn interpolate_atoms(plan: &TransportPlan, t: f64) -> AtomicMeasure {
    let n = plan.dim;
    let mut positions = Vec::with_capacity(plan.entries.len() * n);
    let mut masses = Vec::with_capacity(plan.entries.len());
    for &(i, j, m) in &plan.entries {
        let (x, y) = (plan.source(i), plan.target(j));
        positions.extend((0..n).map(|k| (1.0 - t) * x[k] + t * y[k]));
        masses.push(m);
    }
    AtomicMeasure {
        dim: n,
        positions,
        masses,
    }
}

/// `W₂(μ_s, μ_t) / (|t - s| W₂(μ₀, μ₁))`, re-solving the transport problem.
pub fn geodesic_speed_ratio(plan: &TransportPlan, s: f64, t: f64) -> Result<f64> {
    plan.require_coords()?;
    if s == t || plan.cost == 0.0 {
        return Err(Error::InvalidParameter(
            "speed needs s ≠ t and W₂ > 0".into(),
        ));
    }
    let (a, b) = (interpolate_atoms(plan, s), interpolate_atoms(plan, t));
    let p = solve_w2_points(&a.positions, &a.masses, &b.positions, &b.masses, plan.dim)?;
    Ok(p.w2() / ((t - s).abs() * plan.w2()))
}

/// Kernel-regressed velocity field of the displacement interpolation with
/// Gaussian width `bandwidth_cells` lattice spacings.
pub fn geodesic_drift(
    space: &MmSpace,
    plan: &TransportPlan,
    bandwidth_cells: f64,
) -> Result<VectorFieldSpec> {
    plan.require_coords()?;
    let h = space
        .lattice()
        .ok_or_else(|| Error::Precondition("drift fields live on a lattice".into()))?
        .spacing;
    let mut starts = Vec::new();
    let mut ends = Vec::new();
    let mut masses = Vec::new();
    for &(i, j, m) in &plan.entries {
        starts.extend_from_slice(plan.source(i));
        ends.extend_from_slice(plan.target(j));
        masses.push(m);
    }
    make_field(
        FieldKind::OtDrift {
            starts,
            ends,
            masses,
            bandwidth: bandwidth_cells * h,
        },
        space,
    )
}

#[derive(Debug, Clone, Serialize)]
pub struct PushforwardReport {
    pub s: f64,
    pub t: f64,
    /// `W₂((X_s^t)_# μ_s, μ_t)`.
    pub w2_error: f64,
    /// The error in lattice spacings.
    pub error_cells: f64,
    /// Pairs of interpolant atoms closer than half a cell at time `s` whose
    /// velocities differ by more than half the largest speed: the sampled
    /// geodesic is not induced by a single-valued map there.
    pub conflicts: usize,
}

/// Carry `μ_s` along the drift from `s` to `t` with `steps` RK4 steps and
/// compare with `μ_t`.
pub fn verify_geodesic_pushforward(
    space: &MmSpace,
    plan: &TransportPlan,
    drift: &VectorFieldSpec,
    s: f64,
    t: f64,
    steps: usize,
) -> Result<PushforwardReport> {
    plan.require_coords()?;
    if !(0.0..=1.0).contains(&s) || !(0.0..=1.0).contains(&t) || steps == 0 {
        return Err(Error::InvalidParameter(format!(
            "times {s}, {t} or steps {steps}"
        )));
    }
    let l = space
        .lattice()
        .ok_or_else(|| Error::Precondition("drift fields live on a lattice".into()))?;
    let mu_s = interpolate_atoms(plan, s);
    let mu_t = interpolate_atoms(plan, t);
    let w2_error = if s == t {
        0.0
    } else {
        let (pushed, exited) = integrate_points(
            drift,
            &mu_s.positions,
            s,
            (t - s) / steps as f64,
            steps,
            f64::INFINITY,
        );
        debug_assert!(exited.iter().all(|e| !e));
        solve_w2_points(
            &pushed,
            &mu_s.masses,
            &mu_t.positions,
            &mu_t.masses,
            plan.dim,
        )?
        .w2()
    };
    let n = plan.dim;
    let vel: Vec<Vec<f64>> = plan
        .entries
        .iter()
        .map(|&(i, j, _)| {
            (0..n)
                .map(|k| plan.target(j)[k] - plan.source(i)[k])
                .collect()
        })
        .collect();
    let vmax = vel
        .iter()
        .map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let mut conflicts = 0;
    let pos = &mu_s.positions;
    for a in 0..vel.len() {
        for b in 0..a {
            let d: f64 = (0..n)
                .map(|k| (pos[a * n + k] - pos[b * n + k]).powi(2))
                .sum::<f64>()
                .sqrt();
            let dv: f64 = (0..n)
                .map(|k| (vel[a][k] - vel[b][k]).powi(2))
                .sum::<f64>()
                .sqrt();
            if d < 0.5 * l.spacing && dv > 0.5 * vmax {
                conflicts += 1;
            }
        }
    }
    Ok(PushforwardReport {
        s,
        t,
        w2_error,
        error_cells: w2_error / l.spacing,
        conflicts,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CdRow {
    pub t: f64,
    /// `-∫ ρ_t^{1-1/N'} dm`.
    pub lhs: f64,
    /// `-∫ [τ^{(1-t)}(d) ρ₀^{-1/N'}(x) + τ^{(t)}(d) ρ₁^{-1/N'}(y)] dπ(x, y)`.
    pub rhs: f64,
    /// `rhs - lhs`, nonnegative when the inequality holds.
    pub slack: f64,
    /// Relative change of `lhs` when the bins are doubled.
    pub refinement_change: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CdReport {
    pub n_prime: f64,
    pub curvature: f64,
    pub bin_cells: usize,
    pub rows: Vec<CdRow>,
    pub worst_slack: f64,
    /// Binned densities move by more than 5% under bin doubling somewhere.
    pub refinement_advisory: bool,
}

/// Densities from cloud-in-cell deposits: each atom spreads its mass over
/// the `2ⁿ` nearest bin centres (multiples of `width`) with tensor tent
/// weights, and densities are read back with the same weights. Nearest-bin
/// counting aliases badly against the interpolant's own spacing.
struct Bins {
    width: f64,
    /// Reference mass per unit volume.
    density: f64,
    dim: usize,
}

impl Bins {
    fn stencil(&self, x: &[f64], mut f: impl FnMut(Vec<i64>, f64)) {
        let base: Vec<i64> = x.iter().map(|c| (c / self.width).floor() as i64).collect();
        let frac: Vec<f64> = x
            .iter()
            .zip(&base)
            .map(|(c, b)| c / self.width - *b as f64)
            .collect();
        for corner in 0..1usize << self.dim {
            let mut key = base.clone();
            let mut w = 1.0;
            for k in 0..self.dim {
                if corner >> k & 1 == 1 {
                    key[k] += 1;
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w > 0.0 {
                f(key, w);
            }
        }
    }

    fn deposit(&self, pos: &[f64], masses: &[f64]) -> HashMap<Vec<i64>, f64> {
        let mut out = HashMap::new();
        let cell = self.density * self.width.powi(self.dim as i32);
        for (p, &m) in pos.chunks_exact(self.dim).zip(masses) {
            self.stencil(p, |k, w| *out.entry(k).or_insert(0.0) += w * m / cell);
        }
        out
    }

    fn read(&self, rho: &HashMap<Vec<i64>, f64>, x: &[f64]) -> f64 {
        let mut v = 0.0;
        self.stencil(x, |k, w| v += w * rho.get(&k).copied().unwrap_or(0.0));
        v
    }

    /// `∫ ρ^{1-1/N} dm = ∫ ρ^{-1/N} dμ`.
    fn entropy(&self, pos: &[f64], masses: &[f64], n_prime: f64) -> f64 {
        let rho = self.deposit(pos, masses);
        pos.chunks_exact(self.dim)
            .zip(masses)
            .map(|(p, &m)| m * self.read(&rho, p).powf(-1.0 / n_prime))
            .sum()
    }
}

/// Check the displacement-convexity inequality of `CD(K, N')` along the
/// interpolation of `plan` for each `t`, with densities deposited on bins of
/// `bin_cells` lattice spacings.
pub fn verify_cd_entropy(
    space: &MmSpace,
    plan: &TransportPlan,
    curvature: f64,
    n_prime: f64,
    times: &[f64],
    bin_cells: usize,
) -> Result<CdReport> {
    plan.require_coords()?;
    let l = space
        .lattice()
        .ok_or_else(|| Error::Precondition("binned densities need a lattice".into()))?;
    if bin_cells == 0 {
        return Err(Error::InvalidParameter("bin_cells must be positive".into()));
    }
    let density = space.cell_mass().expect("lattice") / l.spacing.powi(l.dim as i32);
    let bins = |w: usize| Bins {
        width: w as f64 * l.spacing,
        density,
        dim: plan.dim,
    };
    let fine = bins(bin_cells);
    let coarse = bins(2 * bin_cells);
    let rho0 = fine.deposit(&plan.source_coords, &plan.mu0);
    let rho1 = fine.deposit(&plan.target_coords, &plan.mu1);
    let mut rows = Vec::new();
    for &t in times {
        let atoms = interpolate_atoms(plan, t);
        let lhs = -fine.entropy(&atoms.positions, &atoms.masses, n_prime);
        let lhs_coarse = -coarse.entropy(&atoms.positions, &atoms.masses, n_prime);
        let mut rhs = 0.0;
        for &(i, j, m) in &plan.entries {
            let (x, y) = (plan.source(i), plan.target(j));
            let d = x
                .iter()
                .zip(y)
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            let r0 = fine.read(&rho0, x);
            let r1 = fine.read(&rho1, y);
            let tau0 = distortion_coefficients(curvature, n_prime, 1.0 - t, d)?.tau;
            let tau1 = distortion_coefficients(curvature, n_prime, t, d)?.tau;
            rhs -= m * (tau0 * r0.powf(-1.0 / n_prime) + tau1 * r1.powf(-1.0 / n_prime));
        }
        rows.push(CdRow {
            t,
            lhs,
            rhs,
            slack: rhs - lhs,
            refinement_change: ((lhs - lhs_coarse) / lhs).abs(),
        });
    }
    let worst_slack = rows.iter().map(|r| r.slack).fold(f64::INFINITY, f64::min);
    let refinement_advisory = rows.iter().any(|r| r.refinement_change > 0.05);
    Ok(CdReport {
        n_prime,
        curvature,
        bin_cells,
        rows,
        worst_slack,
        refinement_advisory,
    })
}

/// Plan triplets with columns `i, j, mass` (point ids).
pub fn write_plan_csv<W: Write>(out: W, plan: &TransportPlan) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["i", "j", "mass"])?;
    for &(i, j, m) in &plan.entries {
        w.write_record([
            plan.source_ids[i].to_string(),
            plan.target_ids[j].to_string(),
            format!("{m:e}"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::space::{build_grid_space, MeasureLaw};

    fn plane() -> MmSpace {
        build_grid_space(2, 25, 0.1, MeasureLaw::Lebesgue).unwrap()
    }

    fn disc(s: &MmSpace, r: f64, centre: [f64; 2]) -> Vec<usize> {
        (0..s.len())
            .filter(|&i| {
                let c = s.coords(i).unwrap();
                (c[0] - centre[0]).hypot(c[1] - centre[1]) < r - 1e-9
            })
            .collect()
    }

    #[test]
    fn identity_and_single_pair() {
        let s = plane();
        let mu = DiscreteMeasure::uniform(disc(&s, 0.3, [0.0, 0.0]));
        let p = solve_w2(&s, &mu, &mu).unwrap();
        assert!(p.w2() < 1e-12);
        assert!(p
            .entries
            .iter()
            .all(|&(i, j, _)| p.source_ids[i] == p.target_ids[j]));
        let (a, b) = (3usize, 300usize);
        let p = solve_w2(
            &s,
            &DiscreteMeasure {
                points: vec![a],
                masses: vec![1.0],
            },
            &DiscreteMeasure {
                points: vec![b],
                masses: vec![1.0],
            },
        )
        .unwrap();
        assert_eq!(p.entries.len(), 1);
        assert!((p.w2() - s.dist(a, b)).abs() < 1e-12);
    }

    #[test]
    fn crossing_instance_matches_brute_force() {
        let s = plane();
        let l = s.lattice().unwrap();
        let (a0, a1) = (l.index(&[2, 2]), l.index(&[2, 12]));
        let (b0, b1) = (l.index(&[20, 14]), l.index(&[20, 3]));
        let mu0 = DiscreteMeasure {
            points: vec![a0, a1],
            masses: vec![0.5, 0.5],
        };
        let mu1 = DiscreteMeasure {
            points: vec![b0, b1],
            masses: vec![0.5, 0.5],
        };
        let p = solve_w2(&s, &mu0, &mu1).unwrap();
        let d2 = |x, y| s.dist(x, y).powi(2);
        let brute = (0.5 * (d2(a0, b0) + d2(a1, b1))).min(0.5 * (d2(a0, b1) + d2(a1, b0)));
        assert!((p.cost - brute).abs() < 1e-12);
        assert!(p.duality_gap < 1e-8);
    }

    #[test]
    fn mass_mismatch_is_rejected() {
        let s = plane();
        let r = solve_w2(
            &s,
            &DiscreteMeasure {
                points: vec![1],
                masses: vec![1.0],
            },
            &DiscreteMeasure {
                points: vec![2],
                masses: vec![2.0],
            },
        );
        assert!(matches!(r, Err(Error::MassMismatch(..))));
    }

    #[test]
    fn translation_instance() {
        let s = plane();
        let l = s.lattice().unwrap();
        let block = |i0: usize| -> Vec<usize> {
            let mut v: Vec<usize> = (0..7)
                .flat_map(|a| (9..16).map(move |b| l.index(&[i0 + a, b])))
                .collect();
            v.sort_unstable();
            v
        };
        let (src, dst) = (block(2), block(10));
        let plan = solve_w2(
            &s,
            &DiscreteMeasure::uniform(src),
            &DiscreteMeasure::uniform(dst),
        )
        .unwrap();
        assert!((plan.w2() - 0.8).abs() < 1e-9, "{}", plan.w2());
        assert!(plan.duality_gap < 1e-8);
        let i0 = mccann_interpolate(&s, &plan, 0.0).unwrap();
        assert_eq!(i0.measure.positions, plan.source_coords);
        let r0 = i0.max_density_ratio;
        for t in [0.25, 0.5, 1.0] {
            let it = mccann_interpolate(&s, &plan, t).unwrap();
            assert!((it.max_density_ratio - r0).abs() < 1e-9 * r0);
        }
        let speed = geodesic_speed_ratio(&plan, 0.0, 0.5).unwrap();
        assert!((speed - 1.0).abs() < 0.01);
        let drift = geodesic_drift(&s, &plan, 2.0).unwrap();
        let rep = verify_geodesic_pushforward(&s, &plan, &drift, 0.2, 0.7, 20).unwrap();
        assert!(rep.w2_error < 1e-6, "{rep:?}");
        let same = verify_geodesic_pushforward(&s, &plan, &drift, 0.4, 0.4, 1).unwrap();
        assert_eq!(same.w2_error, 0.0);
        // Shifts by whole cells leave the deposits unchanged up to relabelling.
        let cd = verify_cd_entropy(&s, &plan, 0.0, 2.0, &[0.0, 0.25, 0.5, 1.0], 1).unwrap();
        for r in &cd.rows {
            assert!(r.slack.abs() < 1e-9 * r.lhs.abs(), "{r:?}");
        }
        // Off-lattice shifts smear the edges, within the refinement spread.
        let cd = verify_cd_entropy(&s, &plan, 0.0, 2.0, &[0.3, 0.7], 1).unwrap();
        for r in &cd.rows {
            assert!(r.slack.abs() <= r.refinement_change * r.lhs.abs(), "{r:?}");
        }
    }

    #[test]
    fn dilation_instance() {
        let s = plane();
        let src = disc(&s, 0.5, [0.0, 0.0]);
        let dst = disc(&s, 1.0, [0.0, 0.0]);
        let plan = solve_w2(
            &s,
            &DiscreteMeasure::uniform(src),
            &DiscreteMeasure::uniform(dst),
        )
        .unwrap();
        assert!(plan.duality_gap < 1e-8, "{}", plan.duality_gap);
        // The continuum map is x ↦ 2x, so W₂² = E|x|² = r²/2 on the small disc.
        // Lattice discs are lumpy at the boundary, hence the loose tolerance.
        assert!(
            (plan.w2() - (0.5f64.powi(2) / 2.0).sqrt()).abs() < 0.08 * plan.w2(),
            "{}",
            plan.w2()
        );
        for (a, b) in [(0.0, 0.5), (0.3, 0.8)] {
            let r = geodesic_speed_ratio(&plan, a, b).unwrap();
            assert!((r - 1.0).abs() < 0.01, "{r}");
        }
        let drift = geodesic_drift(&s, &plan, 2.0).unwrap();
        let rep = verify_geodesic_pushforward(&s, &plan, &drift, 0.2, 0.8, 40).unwrap();
        assert!(rep.error_cells <= 2.0, "{rep:?}");
        // Continuum: ρ_t = ρ₀/(1+t)², so at t = 1/2 the slack is
        // ρ₀^{-1/3}[(3/2)^{2/3} - (1 + 2^{2/3})/2] with ρ₀ = 4/π.
        let exact = (4.0 / PI).powf(-1.0 / 3.0)
            * (1.5f64.powf(2.0 / 3.0) - 0.5 * (1.0 + 2f64.powf(2.0 / 3.0)));
        for w in [1, 2] {
            let cd =
                verify_cd_entropy(&s, &plan, 0.0, 3.0, &[0.0, 0.25, 0.5, 0.75, 1.0], w).unwrap();
            assert!(cd.worst_slack >= -1e-12, "{cd:?}");
            assert!(cd.rows[0].slack.abs() < 1e-12 && cd.rows[4].slack.abs() < 1e-12);
            assert!((cd.rows[2].slack - exact).abs() < 0.25 * exact, "{cd:?}");
        }
        let mut buf = Vec::new();
        write_plan_csv(&mut buf, &plan).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("i,j,mass\n"));
    }
}
