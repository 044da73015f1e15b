//! Green function values and gradients at off-lattice points.
//!
//! Values come from tensor-product Catmull-Rom interpolation of lattice
//! columns. The interpolant is `C¹` and reproduces lattice values exactly,
//! and its gradient is differentiated from the same interpolant, so time
//! derivatives along trajectories and the chain-rule formula refer to one
//! and the same function.

use std::sync::Arc;

use crate::green::{BoundaryData, GreenField};
use crate::heat::{assemble_laplacian, Grounding};
use crate::space::{build_grid_space, Lattice, MeasureLaw, MmSpace};
use crate::{Error, Result};

/// Largest ambient dimension handled by the interpolators.
pub const MAX_DIM: usize = 6;

/// Pairs closer than this many lattice spacings are below the resolution
/// floor: their interpolation stencil reaches the discrete singularity.
pub const FLOOR_CELLS: f64 = 3.0;

/// `G(p, q)` with both gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct GreenSample {
    pub value: f64,
    /// `∇_p G(p, q)`.
    pub grad_p: Vec<f64>,
    /// `∇_q G(p, q)`.
    pub grad_q: Vec<f64>,
}

/// Green function evaluable at arbitrary ambient points of the domain.
pub trait GreenEvaluator: Send + Sync {
    fn dim(&self) -> usize;

    /// Lattice spacing of the underlying columns.
    fn spacing(&self) -> f64;

    fn value(&self, p: &[f64], q: &[f64]) -> Result<f64>;

    fn sample(&self, p: &[f64], q: &[f64]) -> Result<GreenSample>;

    /// Distance below which values are not resolved.
    fn floor(&self) -> f64 {
        FLOOR_CELLS * self.spacing()
    }

    /// `d_G(p, q) = 1 / G(p, q)`.
    fn dg(&self, p: &[f64], q: &[f64]) -> Result<f64> {
        let g = self.value(p, q)?;
        if !(g > 0.0) {
            return Err(Error::Precondition(format!("nonpositive G = {g:e}")));
        }
        Ok(1.0 / g)
    }
}

/// Catmull-Rom weights at `t ∈ [0, 1]` for nodes `-1, 0, 1, 2`.
fn weights(t: f64) -> ([f64; 4], [f64; 4]) {
    let (t2, t3) = (t * t, t * t * t);
    (
        [
            0.5 * (-t3 + 2.0 * t2 - t),
            0.5 * (3.0 * t3 - 5.0 * t2 + 2.0),
            0.5 * (-3.0 * t3 + 4.0 * t2 + t),
            0.5 * (t3 - t2),
        ],
        [
            0.5 * (-3.0 * t2 + 4.0 * t - 1.0),
            0.5 * (9.0 * t2 - 10.0 * t),
            0.5 * (-9.0 * t2 + 8.0 * t + 1.0),
            0.5 * (3.0 * t2 - 2.0 * t),
        ],
    )
}

/// Interpolate lattice `values` at ambient point `x`. With `grad`, the
/// gradient of the interpolant is written there. Stencil indices are
/// clamped at the box faces.
fn interpolate(l: &Lattice, values: &[f64], x: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
    let n = l.dim;
    let top = (l.side - 1) as f64;
    let mut base = [0i64; MAX_DIM];
    let mut w = [[0.0; 4]; MAX_DIM];
    let mut dw = [[0.0; 4]; MAX_DIM];
    for k in 0..n {
        let u = l.axis_position(x[k]);
        if !(u >= -1e-9 && u <= top + 1e-9) {
            return Err(Error::InvalidParameter(format!(
                "point {:?} outside the interpolation box",
                &x[..n]
            )));
        }
        let u = u.clamp(0.0, top);
        let i0 = (u.floor() as i64).min(l.side as i64 - 2).max(0);
        base[k] = i0;
        (w[k], dw[k]) = weights(u - i0 as f64);
    }
    let mut strides = [0usize; MAX_DIM];
    let mut s = 1usize;
    for st in strides.iter_mut().take(n) {
        *st = s;
        s *= l.side;
    }
    let want_grad = grad.is_some();
    let mut value = 0.0;
    let mut g = [0.0; MAX_DIM];
    let total = 1usize << (2 * n);
    for combo in 0..total {
        let mut idx = 0usize;
        let mut wt = 1.0;
        let mut c = combo;
        let mut sel = [0usize; MAX_DIM];
        for k in 0..n {
            let j = c & 3;
            c >>= 2;
            sel[k] = j;
            let i = (base[k] + j as i64 - 1).clamp(0, l.side as i64 - 1) as usize;
            idx += i * strides[k];
            wt *= w[k][j];
        }
        let v = values[idx];
        value += wt * v;
        if want_grad {
            for k in 0..n {
                let mut p = dw[k][sel[k]];
                for m in 0..n {
                    if m != k {
                        p *= w[m][sel[m]];
                    }
                }
                g[k] += p * v;
            }
        }
    }
    if let Some(out) = grad {
        for k in 0..n {
            out[k] = g[k] / l.spacing;
        }
    }
    Ok(value)
}

/// Translation-invariant kernel `G(p, q) = K(q - p)` from a single column
/// solved at the centre of a box twice as wide as the space, so that every
/// difference of two domain points is covered. Requires far-field boundary
/// data (a tail model with exponent above 2), which makes the column an
/// approximation of the free-space Green function.
#[derive(Debug, Clone)]
pub struct StationaryKernel {
    lattice: Lattice,
    values: Vec<f64>,
    /// Half-width of the domain the kernel serves.
    domain: f64,
}

impl StationaryKernel {
    pub fn build(space: &MmSpace) -> Result<Self> {
        let l = space
            .lattice()
            .ok_or_else(|| Error::Precondition("stationary kernel needs a lattice".into()))?;
        let tail = space.tail().filter(|t| t.exponent > 2.0).ok_or_else(|| {
            Error::Precondition("stationary kernel needs a tail exponent above 2".into())
        })?;
        let scale = space.cell_mass().expect("lattice") / l.spacing.powi(l.dim as i32);
        let big = build_grid_space(l.dim, 2 * l.side - 1, l.spacing, MeasureLaw::Scaled(scale))?
            .with_tail(Some(tail));
        let big = Arc::new(big);
        let op = Arc::new(assemble_laplacian(big.clone(), Grounding::Dirichlet)?);
        let field = GreenField::new(op, 0.0, 0.0)?.with_boundary(BoundaryData::ModelFarField)?;
        let col = field.column(big.centre())?;
        Ok(Self {
            lattice: *big.lattice().expect("lattice"),
            values: col.values.clone(),
            domain: l.half_width(),
        })
    }

    /// `K(v)` with its gradient.
    pub fn kernel(&self, v: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        interpolate(&self.lattice, &self.values, v, grad)
    }

    pub fn domain_half_width(&self) -> f64 {
        self.domain
    }
}

fn offset(p: &[f64], q: &[f64]) -> [f64; MAX_DIM] {
    let mut v = [0.0; MAX_DIM];
    for k in 0..p.len() {
        v[k] = q[k] - p[k];
    }
    v
}

impl GreenEvaluator for StationaryKernel {
    fn dim(&self) -> usize {
        self.lattice.dim
    }

    fn spacing(&self) -> f64 {
        self.lattice.spacing
    }

    fn value(&self, p: &[f64], q: &[f64]) -> Result<f64> {
        let v = offset(p, q);
        self.kernel(&v[..p.len()], None)
    }

    fn sample(&self, p: &[f64], q: &[f64]) -> Result<GreenSample> {
        let n = p.len();
        let v = offset(p, q);
        let mut g = vec![0.0; n];
        let value = self.kernel(&v[..n], Some(&mut g))?;
        Ok(GreenSample {
            value,
            grad_p: g.iter().map(|c| -c).collect(),
            grad_q: g,
        })
    }
}

/// General evaluator: multilinear interpolation over the lattice sources
/// around `p` of Catmull-Rom interpolated columns at `q`. Columns are
/// solved on demand and cached in the field. `∇_p` uses the symmetric
/// construction with the roles of `p` and `q` exchanged.
#[derive(Debug)]
pub struct ColumnInterpolator<'a> {
    field: &'a GreenField,
    lattice: Lattice,
}

impl<'a> ColumnInterpolator<'a> {
    pub fn new(field: &'a GreenField) -> Result<Self> {
        let lattice =
            *field.op().space().lattice().ok_or_else(|| {
                Error::Precondition("column interpolation needs a lattice".into())
            })?;
        Ok(Self { field, lattice })
    }

    /// Lattice sources around `p` with multilinear weights.
    fn corners(&self, p: &[f64]) -> Result<Vec<(usize, f64)>> {
        let l = &self.lattice;
        let n = l.dim;
        let mut base = vec![0usize; n];
        let mut frac = vec![0.0; n];
        for k in 0..n {
            let u = l.axis_position(p[k]);
            if !(u >= 0.0 && u <= (l.side - 1) as f64) {
                return Err(Error::InvalidParameter(format!(
                    "point {p:?} outside the box"
                )));
            }
            let i0 = (u.floor() as usize).min(l.side - 2);
            base[k] = i0;
            frac[k] = u - i0 as f64;
        }
        let mut out = Vec::new();
        let mut idx = vec![0usize; n];
        for combo in 0..1usize << n {
            let mut w = 1.0;
            for k in 0..n {
                let bit = (combo >> k) & 1;
                idx[k] = base[k] + bit;
                w *= if bit == 1 { frac[k] } else { 1.0 - frac[k] };
            }
            if w > 0.0 {
                out.push((l.index(&idx), w));
            }
        }
        Ok(out)
    }

    fn one_sided(&self, p: &[f64], q: &[f64], grad: Option<&mut [f64]>) -> Result<f64> {
        let corners = self.corners(p)?;
        let sources: Vec<usize> = corners.iter().map(|c| c.0).collect();
        self.field.ensure(&sources)?;
        let n = self.lattice.dim;
        let mut value = 0.0;
        let mut acc = vec![0.0; n];
        let mut g = vec![0.0; n];
        let want = grad.is_some();
        for (a, w) in corners {
            let col = self.field.cached(a).expect("ensured");
            value += w * interpolate(
                &self.lattice,
                &col.values,
                q,
                if want { Some(&mut g) } else { None },
            )?;
            if want {
                for k in 0..n {
                    acc[k] += w * g[k];
                }
            }
        }
        if let Some(out) = grad {
            out.copy_from_slice(&acc);
        }
        Ok(value)
    }
}

impl GreenEvaluator for ColumnInterpolator<'_> {
    fn dim(&self) -> usize {
        self.lattice.dim
    }

    fn spacing(&self) -> f64 {
        self.lattice.spacing
    }

    fn value(&self, p: &[f64], q: &[f64]) -> Result<f64> {
        self.one_sided(p, q, None)
    }

    fn sample(&self, p: &[f64], q: &[f64]) -> Result<GreenSample> {
        let n = self.lattice.dim;
        let mut grad_q = vec![0.0; n];
        let mut grad_p = vec![0.0; n];
        let value = self.one_sided(p, q, Some(&mut grad_q))?;
        self.one_sided(q, p, Some(&mut grad_p))?;
        Ok(GreenSample {
            value,
            grad_p,
            grad_q,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn catmull_rom_reproduces_cubics_in_the_interior() {
        let l = Lattice {
            dim: 2,
            side: 9,
            spacing: 0.25,
        };
        let f = |x: f64, y: f64| 1.0 + x - 2.0 * y + x * y + 0.5 * x * x;
        let mut vals = vec![0.0; l.len()];
        let mut c = [0.0; 2];
        for (i, v) in vals.iter_mut().enumerate() {
            l.coords_into(i, &mut c);
            *v = f(c[0], c[1]);
        }
        let mut g = [0.0; 2];
        let p = [0.13, -0.31];
        let v = interpolate(&l, &vals, &p, Some(&mut g)).unwrap();
        assert!((v - f(p[0], p[1])).abs() < 1e-12);
        assert!((g[0] - (1.0 + p[1] + p[0])).abs() < 1e-12);
        assert!((g[1] - (-2.0 + p[0])).abs() < 1e-12);
        // Lattice nodes are reproduced exactly.
        l.coords_into(30, &mut c);
        assert_eq!(interpolate(&l, &vals, &c, None).unwrap(), vals[30]);
    }

    #[test]
    fn stationary_kernel_matches_newtonian_potential_off_lattice() {
        let s = build_grid_space(3, 11, 0.1, MeasureLaw::Lebesgue).unwrap();
        let k = StationaryKernel::build(&s).unwrap();
        let p = [0.03, -0.11, 0.07];
        let q = [0.41, 0.13, -0.22];
        let d: f64 = p
            .iter()
            .zip(&q)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let smp = k.sample(&p, &q).unwrap();
        let exact = 1.0 / (4.0 * PI * d);
        assert!(
            (smp.value / exact - 1.0).abs() < 0.03,
            "{} vs {exact}",
            smp.value
        );
        // ∇_q G ≈ -(q - p) / (4π d³).
        for i in 0..3 {
            let e = -(q[i] - p[i]) / (4.0 * PI * d.powi(3));
            assert!((smp.grad_q[i] - e).abs() < 0.08 * exact / d, "{i}: {smp:?}");
            assert_eq!(smp.grad_p[i], -smp.grad_q[i]);
        }
    }

    #[test]
    fn column_interpolator_agrees_with_stationary_kernel_in_the_core() {
        let s = Arc::new(build_grid_space(3, 15, 0.1, MeasureLaw::Lebesgue).unwrap());
        let k = StationaryKernel::build(&s).unwrap();
        let op = Arc::new(assemble_laplacian(s.clone(), Grounding::Dirichlet).unwrap());
        let field = GreenField::new(op, 0.0, 0.0).unwrap();
        let ci = ColumnInterpolator::new(&field).unwrap();
        let p = [0.04, -0.06, 0.02];
        let q = [-0.27, 0.18, 0.09];
        let a = k.sample(&p, &q).unwrap();
        let b = ci.sample(&p, &q).unwrap();
        assert!((a.value / b.value - 1.0).abs() < 0.02, "{a:?} vs {b:?}");
        for i in 0..3 {
            assert!((a.grad_q[i] - b.grad_q[i]).abs() < 0.05 * a.value / 0.4);
            assert!((a.grad_p[i] - b.grad_p[i]).abs() < 0.05 * a.value / 0.4);
        }
    }

    #[test]
    fn points_outside_the_box_are_rejected() {
        let s = build_grid_space(3, 7, 0.1, MeasureLaw::Lebesgue).unwrap();
        let k = StationaryKernel::build(&s).unwrap();
        assert!(k.value(&[-0.3, 0.0, 0.0], &[0.3, 0.0, 0.0]).is_ok());
        assert!(k.value(&[-0.3, 0.0, 0.0], &[0.9, 0.0, 0.0]).is_err());
    }
}
