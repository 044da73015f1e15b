//! Catalogue of vector fields on ambient coordinates.

use serde::{Deserialize, Serialize};

use crate::space::MmSpace;
use crate::{Error, Result};

/// Field kinds with their parameters. Velocities are in length per unit time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FieldKind {
    /// `b = v`.
    Constant { velocity: Vec<f64> },
    /// Rigid rotation about the origin in the plane of two axes:
    /// `b_i = -ω x_j`, `b_j = ω x_i`.
    Rotation { omega: f64, plane: [usize; 2] },
    /// `b_along = a min(|x_across|, 1)^α sign(x_across)`, other components 0.
    Shear {
        alpha: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        along: usize,
        #[serde(default = "one_index")]
        across: usize,
    },
    /// `b = rate x χ(|x|)` with `χ = 1` up to `inner`, linear down to 0 at
    /// `outer`.
    Radial { rate: f64, inner: f64, outer: f64 },
    /// Kernel regression of displacement velocities along straight
    /// transport segments `z_k(t) = (1-t) s_k + t e_k`, Gaussian kernel of
    /// width `bandwidth`. Coordinates are flattened per segment.
    OtDrift {
        starts: Vec<f64>,
        ends: Vec<f64>,
        masses: Vec<f64>,
        bandwidth: f64,
    },
    /// `(b^X(x), b^Y(y))` on the product of the factor spaces.
    Product {
        first: Box<VectorFieldSpec>,
        second: Box<VectorFieldSpec>,
    },
}

fn one() -> f64 {
    1.0
}

fn one_index() -> usize {
    1
}

/// A catalogue field with its declared bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VectorFieldSpec {
    pub kind: FieldKind,
    pub dim: usize,
    /// `‖b‖_∞` over the domain box.
    pub sup_norm: f64,
    /// Radius of the support around the origin, `None` when the field does
    /// not vanish inside the domain.
    pub support_radius: Option<f64>,
    /// Half-width of the domain box the bounds refer to.
    pub half_width: f64,
}

/// Build a catalogue field on the ambient box of `space`.
pub fn make_field(kind: FieldKind, space: &MmSpace) -> Result<VectorFieldSpec> {
    let lattice = space
        .lattice()
        .ok_or_else(|| Error::Precondition("flows need a lattice (ambient box)".into()))?;
    build(
        kind,
        lattice.dim,
        lattice.half_width(),
        Some(space.core_radius()),
    )
}

/// Build a field on the box `[-w, w]^dim` without a core restriction.
pub fn make_field_on_box(kind: FieldKind, dim: usize, w: f64) -> Result<VectorFieldSpec> {
    build(kind, dim, w, None)
}

fn invalid(msg: String) -> Error {
    Error::InvalidParameter(msg)
}

fn build(kind: FieldKind, dim: usize, w: f64, core: Option<f64>) -> Result<VectorFieldSpec> {
    let (sup_norm, support_radius) = match &kind {
        FieldKind::Constant { velocity } => {
            if velocity.len() != dim {
                return Err(invalid(format!(
                    "velocity has {} components in dimension {dim}",
                    velocity.len()
                )));
            }
            (velocity.iter().map(|v| v * v).sum::<f64>().sqrt(), None)
        }
        FieldKind::Rotation { omega, plane } => {
            if plane[0] == plane[1] || plane[0] >= dim || plane[1] >= dim {
                return Err(invalid(format!("bad rotation plane {plane:?}")));
            }
            (omega.abs() * w * 2f64.sqrt(), None)
        }
        FieldKind::Shear {
            alpha,
            amplitude,
            along,
            across,
        } => {
            if !(*alpha > 0.5 && *alpha < 1.0) {
                return Err(invalid(format!("shear exponent {alpha} outside (1/2, 1)")));
            }
            if along == across || *along >= dim || *across >= dim {
                return Err(invalid(format!("bad shear axes {along}, {across}")));
            }
            (amplitude.abs() * w.min(1.0).powf(*alpha), None)
        }
        FieldKind::Radial { rate, inner, outer } => {
            if !(*inner >= 0.0 && outer > inner) {
                return Err(invalid(format!("radial radii {inner}, {outer}")));
            }
            if let Some(c) = core {
                if *outer > c * (1.0 + 1e-12) {
                    return Err(invalid(format!(
                        "support radius {outer} exceeds core radius {c}"
                    )));
                }
            }
            // |b| = rate r χ(r) peaks at r = outer/2 when that lies past inner.
            let peak = if outer / 2.0 > *inner {
                outer * outer / (4.0 * (outer - inner))
            } else {
                *inner
            };
            (rate.abs() * peak, Some(*outer))
        }
        FieldKind::OtDrift {
            starts,
            ends,
            masses,
            bandwidth,
        } => {
            if starts.len() != ends.len() || starts.len() != masses.len() * dim || masses.is_empty()
            {
                return Err(invalid("inconsistent drift segments".into()));
            }
            if !(*bandwidth > 0.0) {
                return Err(invalid(format!("bandwidth {bandwidth}")));
            }
            let sup = starts
                .chunks_exact(dim)
                .zip(ends.chunks_exact(dim))
                .map(|(s, e)| s.iter().zip(e).map(|(a, b)| (b - a).powi(2)).sum::<f64>())
                .fold(0.0, f64::max)
                .sqrt();
            (sup, None)
        }
        FieldKind::Product { first, second } => {
            if first.dim + second.dim != dim {
                return Err(invalid("product dimension mismatch".into()));
            }
            (first.sup_norm.hypot(second.sup_norm), None)
        }
    };
    Ok(VectorFieldSpec {
        kind,
        dim,
        sup_norm,
        support_radius,
        half_width: w,
    })
}

impl VectorFieldSpec {
    /// Product field on the product of the two ambient spaces.
    pub fn product(first: VectorFieldSpec, second: VectorFieldSpec) -> VectorFieldSpec {
        let dim = first.dim + second.dim;
        let sup_norm = first.sup_norm.hypot(second.sup_norm);
        let half_width = first.half_width.max(second.half_width);
        VectorFieldSpec {
            kind: FieldKind::Product {
                first: Box::new(first),
                second: Box::new(second),
            },
            dim,
            sup_norm,
            support_radius: None,
            half_width,
        }
    }

    /// Fields whose symmetric derivative and divergence vanish identically.
    pub fn is_rigid(&self) -> bool {
        match &self.kind {
            FieldKind::Constant { .. } | FieldKind::Rotation { .. } => true,
            FieldKind::Product { first, second } => first.is_rigid() && second.is_rigid(),
            _ => false,
        }
    }

    pub fn is_autonomous(&self) -> bool {
        match &self.kind {
            FieldKind::OtDrift { .. } => false,
            FieldKind::Product { first, second } => first.is_autonomous() && second.is_autonomous(),
            _ => true,
        }
    }

    /// Lipschitz bound used for step control, taken at distance `h` from
    /// the singular plane of a shear.
    pub fn lipschitz(&self, h: f64) -> f64 {
        match &self.kind {
            FieldKind::Constant { .. } => 0.0,
            FieldKind::Rotation { omega, .. } => omega.abs(),
            FieldKind::Shear {
                alpha, amplitude, ..
            } => amplitude.abs() * alpha * h.min(1.0).powf(alpha - 1.0),
            FieldKind::Radial { rate, inner, outer } => {
                rate.abs() * (1.0 + outer / (outer - inner))
            }
            FieldKind::OtDrift { bandwidth, .. } => 2.0 * self.sup_norm / bandwidth,
            FieldKind::Product { first, second } => first.lipschitz(h).max(second.lipschitz(h)),
        }
    }

    /// Distance from `x` to the singular set of the field, `+inf` if smooth.
    pub fn singular_distance(&self, x: &[f64]) -> f64 {
        match &self.kind {
            FieldKind::Shear { across, .. } => x[*across].abs(),
            FieldKind::Product { first, second } => first
                .singular_distance(&x[..first.dim])
                .min(second.singular_distance(&x[first.dim..])),
            _ => f64::INFINITY,
        }
    }

    /// `b(t, x)` into `out`.
    pub fn velocity(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            FieldKind::Constant { velocity } => out.copy_from_slice(velocity),
            FieldKind::Rotation { omega, plane } => {
                out.fill(0.0);
                out[plane[0]] = -omega * x[plane[1]];
                out[plane[1]] = omega * x[plane[0]];
            }
            FieldKind::Shear {
                alpha,
                amplitude,
                along,
                across,
            } => {
                out.fill(0.0);
                let u = x[*across];
                out[*along] = amplitude * u.abs().min(1.0).powf(*alpha) * u.signum();
            }
            FieldKind::Radial { rate, inner, outer } => {
                let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
                let chi = cutoff(r, *inner, *outer).0;
                for (o, c) in out.iter_mut().zip(x) {
                    *o = rate * chi * c;
                }
            }
            FieldKind::OtDrift {
                starts,
                ends,
                masses,
                bandwidth,
            } => {
                let n = self.dim;
                out.fill(0.0);
                let inv = 1.0 / (2.0 * bandwidth * bandwidth);
                let mut total = 0.0;
                for (k, &m) in masses.iter().enumerate() {
                    let (s, e) = (&starts[k * n..(k + 1) * n], &ends[k * n..(k + 1) * n]);
                    let d2: f64 = (0..n)
                        .map(|i| (x[i] - ((1.0 - t) * s[i] + t * e[i])).powi(2))
                        .sum();
                    let w = m * (-d2 * inv).exp();
                    total += w;
                    for i in 0..n {
                        out[i] += w * (e[i] - s[i]);
                    }
                }
                if total > 1e-300 {
                    out.iter_mut().for_each(|o| *o /= total);
                } else {
                    out.fill(0.0);
                }
            }
            FieldKind::Product { first, second } => {
                let k = first.dim;
                first.velocity(t, &x[..k], &mut out[..k]);
                second.velocity(t, &x[k..], &mut out[k..]);
            }
        }
    }

    /// Jacobian `J[i][j] = ∂b_i/∂x_j`, row-major. Analytic for every kind
    /// except the drift, which uses centred differences.
    pub fn jacobian(&self, t: f64, x: &[f64]) -> Vec<f64> {
        let n = self.dim;
        let mut j = vec![0.0; n * n];
        match &self.kind {
            FieldKind::Constant { .. } => {}
            FieldKind::Rotation { omega, plane } => {
                j[plane[0] * n + plane[1]] = -omega;
                j[plane[1] * n + plane[0]] = *omega;
            }
            FieldKind::Shear {
                alpha,
                amplitude,
                along,
                across,
            } => {
                let u = x[*across].abs();
                j[along * n + across] = if u < 1.0 {
                    amplitude * alpha * u.powf(alpha - 1.0)
                } else {
                    0.0
                };
            }
            FieldKind::Radial { rate, inner, outer } => {
                let r = x.iter().map(|c| c * c).sum::<f64>().sqrt();
                let (chi, dchi) = cutoff(r, *inner, *outer);
                for a in 0..n {
                    j[a * n + a] += rate * chi;
                    if r > 0.0 {
                        for b in 0..n {
                            j[a * n + b] += rate * x[a] * dchi * x[b] / r;
                        }
                    }
                }
            }
            FieldKind::OtDrift { bandwidth, .. } => {
                return finite_difference_jacobian(self, t, x, 1e-4 * bandwidth);
            }
            FieldKind::Product { first, second } => {
                let k = first.dim;
                let a = first.jacobian(t, &x[..k]);
                let b = second.jacobian(t, &x[k..]);
                for r in 0..k {
                    j[r * n..r * n + k].copy_from_slice(&a[r * k..(r + 1) * k]);
                }
                let m = second.dim;
                for r in 0..m {
                    j[(k + r) * n + k..(k + r) * n + n].copy_from_slice(&b[r * m..(r + 1) * m]);
                }
            }
        }
        j
    }
}

/// `χ(r)` and `χ'(r)` of the radial cutoff.
fn cutoff(r: f64, inner: f64, outer: f64) -> (f64, f64) {
    if r <= inner {
        (1.0, 0.0)
    } else if r < outer {
        ((outer - r) / (outer - inner), -1.0 / (outer - inner))
    } else {
        (0.0, 0.0)
    }
}

/// Centred-difference Jacobian with step `step`.
pub fn finite_difference_jacobian(
    spec: &VectorFieldSpec,
    t: f64,
    x: &[f64],
    step: f64,
) -> Vec<f64> {
    let n = spec.dim;
    let mut j = vec![0.0; n * n];
    let (mut xp, mut xm) = (x.to_vec(), x.to_vec());
    let (mut bp, mut bm) = (vec![0.0; n], vec![0.0; n]);
    for c in 0..n {
        xp[c] = x[c] + step;
        xm[c] = x[c] - step;
        spec.velocity(t, &xp, &mut bp);
        spec.velocity(t, &xm, &mut bm);
        for r in 0..n {
            j[r * n + c] = (bp[r] - bm[r]) / (2.0 * step);
        }
        xp[c] = x[c];
        xm[c] = x[c];
    }
    j
}

/// Divergence and Hilbert-Schmidt norm of the symmetrized Jacobian.
pub fn jacobian_invariants(j: &[f64], n: usize) -> (f64, f64) {
    let div = (0..n).map(|i| j[i * n + i]).sum();
    let mut hs = 0.0;
    for a in 0..n {
        for b in 0..n {
            let s = 0.5 * (j[a * n + b] + j[b * n + a]);
            hs += s * s;
        }
    }
    (div, hs.sqrt())
}

/// `(div b, |∇_sym b|_HS)` at `(t, x)`.
pub fn field_derivatives(spec: &VectorFieldSpec, t: f64, x: &[f64]) -> (f64, f64) {
    jacobian_invariants(&spec.jacobian(t, x), spec.dim)
}

/// Gauss-Legendre nodes and weights on `[-1/2, 1/2]`.
const GAUSS3: [(f64, f64); 3] = [
    (-0.387_298_334_620_741_7, 5.0 / 18.0),
    (0.0, 8.0 / 18.0),
    (0.387_298_334_620_741_7, 5.0 / 18.0),
];

/// `g = |∇_sym b| + |div b|` averaged over the lattice cell of every point.
///
/// Cell averages keep `g` finite on lattice points lying on the singular
/// plane of a shear, where the pointwise value is infinite but `g` is
/// locally integrable. The shear average is exact; other kinds use a
/// three-point Gauss rule per axis.
pub fn cell_average_g(spec: &VectorFieldSpec, space: &MmSpace, t: f64) -> Result<Vec<f64>> {
    let l = space
        .lattice()
        .ok_or_else(|| Error::Precondition("cell averages need a lattice".into()))?;
    if l.dim != spec.dim {
        return Err(invalid(format!(
            "field dimension {} on a {}-dimensional lattice",
            spec.dim, l.dim
        )));
    }
    let h = l.spacing;
    let n = l.dim;
    let mut x = vec![0.0; n];
    let mut out = Vec::with_capacity(l.len());
    for i in 0..l.len() {
        l.coords_into(i, &mut x);
        out.push(cell_g(spec, t, &x, h));
    }
    Ok(out)
}

fn cell_g(spec: &VectorFieldSpec, t: f64, x: &[f64], h: f64) -> f64 {
    match &spec.kind {
        FieldKind::Constant { .. } | FieldKind::Rotation { .. } => 0.0,
        FieldKind::Shear {
            alpha,
            amplitude,
            across,
            ..
        } => {
            // ∫ |u|^{α-1} du over the cell, clipped to |u| < 1.
            let prim = |u: f64| u.signum() * u.abs().powf(*alpha) / alpha;
            let lo = (x[*across] - h / 2.0).clamp(-1.0, 1.0);
            let hi = (x[*across] + h / 2.0).clamp(-1.0, 1.0);
            amplitude.abs() * alpha / 2f64.sqrt() * (prim(hi) - prim(lo)) / h
        }
        _ => {
            let n = spec.dim;
            let total = 3usize.pow(n as u32);
            let mut p = vec![0.0; n];
            let mut acc = 0.0;
            for mut k in 0..total {
                let mut w = 1.0;
                for (c, pc) in p.iter_mut().enumerate() {
                    let (node, weight) = GAUSS3[k % 3];
                    k /= 3;
                    *pc = x[c] + node * h;
                    w *= weight;
                }
                let (div, hs) = field_derivatives(spec, t, &p);
                acc += w * (hs + div.abs());
            }
            acc
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{build_grid_space, MeasureLaw};
    use approx::assert_relative_eq;

    fn r3() -> MmSpace {
        build_grid_space(3, 21, 0.1, MeasureLaw::Lebesgue).unwrap()
    }

    #[test]
    fn rotation_is_rigid() {
        let s = r3();
        let f = make_field(
            FieldKind::Rotation {
                omega: 1.3,
                plane: [0, 1],
            },
            &s,
        )
        .unwrap();
        let (div, hs) = field_derivatives(&f, 0.0, &[0.3, -0.2, 0.5]);
        assert_eq!(div, 0.0);
        assert_eq!(hs, 0.0);
    }

    #[test]
    fn identity_jacobian_invariants() {
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
        let (div, hs) = field_derivatives(&f, 0.0, &[0.1, 0.2, -0.1]);
        assert_relative_eq!(div, 3.0, epsilon = 1e-14);
        assert_relative_eq!(hs, 3f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn shear_symmetric_derivative() {
        let s = r3();
        let f = make_field(
            FieldKind::Shear {
                alpha: 0.7,
                amplitude: 1.0,
                along: 0,
                across: 1,
            },
            &s,
        )
        .unwrap();
        let (div, hs) = field_derivatives(&f, 0.0, &[0.0, 0.5, 0.0]);
        assert_eq!(div, 0.0);
        assert_relative_eq!(hs, 0.7 * 0.5f64.powf(-0.3) / 2f64.sqrt(), epsilon = 1e-14);
    }

    #[test]
    fn catalogue_ranges_are_enforced() {
        let s = r3();
        let bad = FieldKind::Shear {
            alpha: 0.4,
            amplitude: 1.0,
            along: 0,
            across: 1,
        };
        assert!(matches!(
            make_field(bad, &s),
            Err(Error::InvalidParameter(_))
        ));
        let wide = FieldKind::Radial {
            rate: 1.0,
            inner: 0.5,
            outer: 0.9,
        };
        assert!(matches!(
            make_field(wide, &s),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn finite_differences_match_analytic_jacobians() {
        let s = r3();
        let kinds = [
            FieldKind::Radial {
                rate: 0.8,
                inner: 0.3,
                outer: 0.7,
            },
            FieldKind::Shear {
                alpha: 0.7,
                amplitude: 2.0,
                along: 2,
                across: 0,
            },
            FieldKind::Rotation {
                omega: -0.5,
                plane: [2, 1],
            },
        ];
        let x = [0.35, 0.21, -0.28];
        for k in kinds {
            let f = make_field(k, &s).unwrap();
            let a = f.jacobian(0.0, &x);
            let d = finite_difference_jacobian(&f, 0.0, &x, 1e-6);
            for (u, v) in a.iter().zip(&d) {
                assert!((u - v).abs() < 1e-6, "{:?}: {a:?} vs {d:?}", f.kind);
            }
        }
    }

    #[test]
    fn shear_cell_average_matches_quadrature() {
        let s = r3();
        let f = make_field(
            FieldKind::Shear {
                alpha: 0.7,
                amplitude: 1.0,
                along: 0,
                across: 1,
            },
            &s,
        )
        .unwrap();
        let g = cell_average_g(&f, &s, 0.0).unwrap();
        // Point with x₂ = 0.3: compare with a fine midpoint rule.
        let l = s.lattice().unwrap();
        let i = l.index(&[10, 13, 10]);
        let m = 20_000;
        let avg: f64 = (0..m)
            .map(|k| {
                let u = 0.25 + 0.1 * (k as f64 + 0.5) / m as f64;
                0.7 * u.powf(-0.3) / 2f64.sqrt()
            })
            .sum::<f64>()
            / m as f64;
        assert_relative_eq!(g[i], avg, max_relative = 1e-8);
        // On the singular plane the average is finite.
        let c = l.index(&[10, 10, 10]);
        assert!(g[c].is_finite() && g[c] > g[i]);
    }
}
