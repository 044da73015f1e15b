//! The functional `Φ_{t,r}(x) = ⨍_{B^G(x,r)} log(1 + d_G(X_t x, X_t y)/r) dm(y)`,
//! its maximum `Φ*` over a `(t, r)` grid, and Lusin-Lipschitz regularity of
//! the flow in `d_G`.

use rayon::prelude::*;
use serde::Serialize;

use super::kernel::GreenEvaluator;
use super::FlowResult;
use crate::sampling;
use crate::space::{in_open_ball, MmSpace};
use crate::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct PhiTable {
    /// Seed numbers of the centres (the region `P`).
    pub centres: Vec<usize>,
    /// Recorded steps of the flow used as the time grid.
    pub steps: Vec<usize>,
    /// `d_G` radii.
    pub radii: Vec<f64>,
    /// `Φ_{t,r}(x)` indexed `[x][t][r]`; NaN where `B^G(x, r) = {x}`.
    pub phi: Vec<f64>,
    pub phi_star: Vec<f64>,
    /// `(⨍_P Φ*² dm)^{1/2}`.
    pub norm_l2: f64,
    /// `m(P)`.
    pub mass: f64,
    /// Ball members dropped because their trajectory left the domain.
    pub exited_members: usize,
}

impl PhiTable {
    pub fn get(&self, x: usize, t: usize, r: usize) -> f64 {
        self.phi[(x * self.steps.len() + t) * self.radii.len() + r]
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(u, v)| (u - v) * (u - v))
        .sum::<f64>()
        .sqrt()
}

/// `Φ_{t,r}` on the `(steps, radii)` grid for every centre, and `Φ*`.
///
/// Balls `B^G(x, r)` are taken at time 0 among the seeds of `result`; every
/// lattice point of the largest ball must be a seed, otherwise the ball
/// would be truncated and the call fails.
pub fn phi_star(
    space: &MmSpace,
    result: &FlowResult,
    eval: &dyn GreenEvaluator,
    centres: &[usize],
    steps: &[usize],
    radii: &[f64],
) -> Result<PhiTable> {
    if radii.is_empty() || radii.iter().any(|&r| !(r > 0.0)) {
        return Err(Error::InvalidParameter("radii must be positive".into()));
    }
    if let Some(&k) = steps.iter().find(|&&k| k > result.steps()) {
        return Err(Error::InvalidParameter(format!(
            "step {k} was not recorded"
        )));
    }
    if let Some(&c) = centres.iter().find(|&&c| c >= result.seeds.len()) {
        return Err(Error::InvalidParameter(format!("centre {c} is not a seed")));
    }
    let rmax = radii.iter().copied().fold(0.0, f64::max);
    let lookup = result.seed_lookup();
    let (nt, nr) = (steps.len(), radii.len());
    type Row = (Vec<f64>, usize);
    let rows: Vec<Result<Row>> = centres
        .par_iter()
        .map(|&i| {
            let x0 = result.position(i, 0);
            let xp = result.seeds[i];
            // Members of the largest ball with their time-0 distance.
            let mut members: Vec<(f64, usize)> = vec![(0.0, i)];
            let mut exited = 0;
            let mut reach = 0.0f64;
            for j in 0..result.seeds.len() {
                if j == i {
                    continue;
                }
                let d = eval.dg(x0, result.position(j, 0))?;
                if in_open_ball(d, rmax) {
                    reach = reach.max(space.dist(xp, result.seeds[j]));
                    if result.exited[j] {
                        exited += 1;
                    } else {
                        members.push((d, j));
                    }
                }
            }
            // No lattice point outside the seeds may belong to the ball.
            let mut missing = None;
            space.for_each_in_ball(
                xp,
                reach * 1.5 + space.lattice().map_or(0.0, |l| l.spacing),
                |z, _| {
                    if missing.is_none() && !lookup.contains_key(&z) && z != xp {
                        let zc = space.coords(z).expect("lattice");
                        if let Ok(d) = eval.dg(x0, &zc) {
                            if in_open_ball(d, rmax) {
                                missing = Some(z);
                            }
                        }
                    }
                },
            );
            if let Some(z) = missing {
                return Err(Error::Precondition(format!(
                    "G-ball of radius {rmax} around seed {xp} contains non-seed point {z}"
                )));
            }
            members.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let weights: Vec<f64> = members
                .iter()
                .map(|&(_, j)| space.weight(result.seeds[j]))
                .collect();
            let mut out = vec![f64::NAN; nt * nr];
            for (ti, &k) in steps.iter().enumerate() {
                let xk = result.position(i, k);
                let dk: Vec<f64> = members
                    .iter()
                    .map(|&(_, j)| {
                        if j == i {
                            Ok(0.0)
                        } else {
                            eval.dg(xk, result.position(j, k))
                        }
                    })
                    .collect::<Result<_>>()?;
                for (ri, &r) in radii.iter().enumerate() {
                    let (mut num, mut den, mut count) = (0.0, 0.0, 0);
                    for (m, (&(d0, _), &dk)) in members.iter().zip(&dk).enumerate() {
                        if !in_open_ball(d0, r) && m > 0 {
                            break;
                        }
                        num += weights[m] * (dk / r).ln_1p();
                        den += weights[m];
                        count += 1;
                    }
                    if count > 1 {
                        out[ti * nr + ri] = num / den;
                    }
                }
            }
            Ok((out, exited))
        })
        .collect();
    let mut phi = Vec::with_capacity(centres.len() * nt * nr);
    let mut phi_star = Vec::with_capacity(centres.len());
    let mut exited_members = 0;
    for r in rows {
        let (row, ex) = r?;
        phi_star.push(
            row.iter()
                .copied()
                .filter(|v| !v.is_nan())
                .fold(0.0, f64::max),
        );
        phi.extend(row);
        exited_members += ex;
    }
    let w: Vec<f64> = centres
        .iter()
        .map(|&c| space.weight(result.seeds[c]))
        .collect();
    let mass: f64 = w.iter().sum();
    let norm_l2 = (phi_star.iter().zip(&w).map(|(p, m)| p * p * m).sum::<f64>() / mass).sqrt();
    Ok(PhiTable {
        centres: centres.to_vec(),
        steps: steps.to_vec(),
        radii: radii.to_vec(),
        phi,
        phi_star,
        norm_l2,
        mass,
        exited_members,
    })
}

/// `Φ_{t,r}` at one recorded step and radius.
pub fn phi_functional(
    space: &MmSpace,
    result: &FlowResult,
    eval: &dyn GreenEvaluator,
    centres: &[usize],
    step: usize,
    r: f64,
) -> Result<Vec<f64>> {
    Ok(phi_star(space, result, eval, centres, &[step], &[r])?.phi)
}

/// Principal branch of the Lambert W function for `z ≥ 0`.
pub fn lambert_w(z: f64) -> f64 {
    assert!(z >= 0.0, "lambert_w needs z >= 0");
    if z == 0.0 {
        return 0.0;
    }
    let mut w = if z < 3.0 {
        z.ln_1p() * 0.9
    } else {
        let l = z.ln();
        l - l.ln()
    };
    // Halley iteration.
    for _ in 0..64 {
        let e = w.exp();
        let f = w * e - z;
        let step = f / (e * (w + 1.0) - (w + 2.0) * f / (2.0 * w + 2.0));
        w -= step;
        if step.abs() <= 1e-15 * (1.0 + w.abs()) {
            break;
        }
    }
    w
}

#[derive(Debug, Clone, Serialize)]
pub struct LusinLevel {
    pub eps: f64,
    /// `‖Φ*‖ / √ε`.
    pub threshold: f64,
    /// `m(P \ E) / m(P)`.
    pub deficit: f64,
    pub set_size: usize,
    /// `max d_G(X_t x, X_t y) / d_G(x, y)` over the sampled pairs of `E`.
    pub lipschitz: f64,
    /// `C exp(2 C threshold)` with the pointwise constant.
    pub envelope: f64,
    pub pairs: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct LusinReport {
    /// Smallest `C` with `d_G(X_t x, X_t y) ≤ C e^{C(Φ*(x)+Φ*(y))} d_G(x, y)`
    /// on the sampled pairs and steps.
    pub pointwise_c: f64,
    pub pointwise_pairs: usize,
    pub levels: Vec<LusinLevel>,
}

/// Largest `d_G` stretch of the flow over `pairs` (seed numbers) and steps,
/// together with the pointwise constant; pair-times closer than the
/// resolution floor are skipped.
fn stretch(
    result: &FlowResult,
    eval: &dyn GreenEvaluator,
    pairs: &[(usize, usize)],
    steps: &[usize],
    phi_sum: impl Fn(usize, usize) -> f64 + Sync,
) -> Result<(f64, f64, usize)> {
    let floor = eval.floor();
    let rows: Vec<Result<(f64, f64, bool)>> = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (a0, b0) = (result.position(i, 0), result.position(j, 0));
            if dist(a0, b0) < floor || result.exited[i] || result.exited[j] {
                return Ok((0.0, 0.0, false));
            }
            let d0 = eval.dg(a0, b0)?;
            let s = phi_sum(i, j);
            let (mut lip, mut c) = (0.0f64, 0.0f64);
            for &k in steps {
                let (a, b) = (result.position(i, k), result.position(j, k));
                if dist(a, b) < floor {
                    continue;
                }
                let rho = eval.dg(a, b)? / d0;
                lip = lip.max(rho);
                c = c.max(if s > 0.0 { lambert_w(rho * s) / s } else { rho });
            }
            Ok((lip, c, true))
        })
        .collect();
    let (mut lip, mut c, mut used) = (0.0f64, 0.0f64, 0);
    for r in rows {
        let (l, cc, u) = r?;
        lip = lip.max(l);
        c = c.max(cc);
        used += u as usize;
    }
    Ok((lip, c, used))
}

fn random_pairs(pool: &[usize], count: usize, rng: &mut impl rand::Rng) -> Vec<(usize, usize)> {
    if pool.len() < 2 {
        return Vec::new();
    }
    (0..count)
        .map(|_| {
            let a = pool[rng.gen_range(0..pool.len())];
            let mut b = pool[rng.gen_range(0..pool.len())];
            while b == a {
                b = pool[rng.gen_range(0..pool.len())];
            }
            (a, b)
        })
        .collect()
}

/// Pointwise constant and, for every `ε`, the Chebyshev set
/// `E = {Φ* ≤ ‖Φ*‖/√ε}` with its deficit and the `d_G` Lipschitz constant
/// of the flow on `E × E`, from `pair_count` random pairs drawn with `seed`.
pub fn verify_lusin_lipschitz(
    space: &MmSpace,
    result: &FlowResult,
    eval: &dyn GreenEvaluator,
    table: &PhiTable,
    eps: &[f64],
    pair_count: usize,
    seed: u64,
) -> Result<LusinReport> {
    if let Some(e) = eps.iter().find(|&&e| !(e > 0.0 && e < 1.0)) {
        return Err(Error::InvalidParameter(format!("ε = {e} outside (0, 1)")));
    }
    let mut rng = sampling::rng(seed);
    let star: std::collections::HashMap<usize, f64> = table
        .centres
        .iter()
        .copied()
        .zip(table.phi_star.iter().copied())
        .collect();
    let phi_sum = |i: usize, j: usize| star[&i] + star[&j];
    let all_steps: Vec<usize> = (0..=result.steps()).collect();
    let pairs = random_pairs(&table.centres, pair_count, &mut rng);
    let (_, pointwise_c, pointwise_pairs) = stretch(result, eval, &pairs, &all_steps, phi_sum)?;
    let mut levels = Vec::new();
    for &e in eps {
        let threshold = table.norm_l2 / e.sqrt();
        let set: Vec<usize> = table
            .centres
            .iter()
            .zip(&table.phi_star)
            .filter(|(_, &p)| p <= threshold)
            .map(|(&c, _)| c)
            .collect();
        let kept_mass: f64 = set.iter().map(|&c| space.weight(result.seeds[c])).sum();
        let pairs = random_pairs(&set, pair_count, &mut rng);
        let (lipschitz, _, used) = stretch(result, eval, &pairs, &all_steps, phi_sum)?;
        levels.push(LusinLevel {
            eps: e,
            threshold,
            deficit: 1.0 - kept_mass / table.mass,
            set_size: set.len(),
            lipschitz,
            envelope: pointwise_c * (2.0 * pointwise_c * threshold).exp(),
            pairs: used,
        });
    }
    Ok(LusinReport {
        pointwise_c,
        pointwise_pairs,
        levels,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{integrate_rlf, make_field, FieldKind, StationaryKernel, VectorFieldSpec};
    use crate::space::{build_grid_space, MeasureLaw};

    #[test]
    fn lambert_w_inverts_w_exp_w() {
        for z in [1e-8, 0.1, 1.0, 2.5, 10.0, 1e3, 1e8] {
            let w = lambert_w(z);
            assert!((w * w.exp() - z).abs() <= 1e-12 * z, "{z}: {w}");
        }
        assert_eq!(lambert_w(0.0), 0.0);
    }

    fn setup(
        kind: FieldKind,
        horizon: f64,
    ) -> (MmSpace, VectorFieldSpec, FlowResult, StationaryKernel) {
        let s = build_grid_space(3, 15, 0.1, MeasureLaw::Lebesgue).unwrap();
        let f = make_field(kind, &s).unwrap();
        let seeds: Vec<usize> = (0..s.len()).filter(|&i| s.is_interior(i)).collect();
        let r = integrate_rlf(&s, &f, &seeds, 0.0, horizon, None).unwrap();
        let k = StationaryKernel::build(&s).unwrap();
        (s, f, r, k)
    }

    fn centres(s: &MmSpace, r: &FlowResult, radius: f64) -> Vec<usize> {
        (0..r.seeds.len())
            .filter(|&i| {
                s.coords(r.seeds[i])
                    .unwrap()
                    .iter()
                    .map(|c| c * c)
                    .sum::<f64>()
                    < radius * radius
            })
            .collect()
    }

    #[test]
    fn phi_at_time_zero_is_at_most_log_two() {
        let (s, _, r, k) = setup(
            FieldKind::Rotation {
                omega: 1.0,
                plane: [0, 1],
            },
            0.4,
        );
        let c = centres(&s, &r, 0.2);
        let radii = [4.0, 5.0, 6.0];
        let t = phi_star(&s, &r, &k, &c, &[0], &radii).unwrap();
        assert!(t
            .phi
            .iter()
            .filter(|v| !v.is_nan())
            .all(|&v| v <= 2f64.ln()));
        let all = phi_star(&s, &r, &k, &c, &[0, r.steps() / 2, r.steps()], &radii).unwrap();
        // Rotations keep d_G up to lattice anisotropy.
        assert!(
            all.phi_star.iter().all(|&v| v <= 2f64.ln() * 1.02),
            "{:?}",
            all.phi_star
        );
        let rep = verify_lusin_lipschitz(&s, &r, &k, &all, &[0.1, 0.5], 300, 1).unwrap();
        for l in &rep.levels {
            assert!(l.lipschitz <= 1.05, "{l:?}");
            assert!(l.deficit < l.eps);
        }
    }

    #[test]
    fn truncated_balls_are_rejected() {
        let (s, _, r, k) = setup(
            FieldKind::Rotation {
                omega: 1.0,
                plane: [0, 1],
            },
            0.2,
        );
        let c = centres(&s, &r, 0.2);
        // d_G = 12 is a Euclidean radius near 1, beyond the seeded region.
        assert!(matches!(
            phi_star(&s, &r, &k, &c, &[0], &[12.0]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn shear_lusin_set() {
        let (s, _, r, k) = setup(
            FieldKind::Shear {
                alpha: 0.7,
                amplitude: 1.0,
                along: 0,
                across: 1,
            },
            0.2,
        );
        let c = centres(&s, &r, 0.2);
        let steps: Vec<usize> = (0..=r.steps()).step_by(2).collect();
        let t = phi_star(&s, &r, &k, &c, &steps, &[4.0, 5.0, 6.0]).unwrap();
        assert!(t.norm_l2 > 0.0 && t.norm_l2.is_finite());
        let rep = verify_lusin_lipschitz(&s, &r, &k, &t, &[0.1], 500, 2).unwrap();
        let l = &rep.levels[0];
        assert!(l.deficit < 0.1);
        assert!(l.lipschitz.is_finite() && l.lipschitz >= 1.0);
        assert!(l.lipschitz <= l.envelope * (1.0 + 1e-12), "{rep:?}");
    }
}
