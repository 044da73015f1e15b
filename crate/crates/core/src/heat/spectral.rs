//! Eigen-expansions of the heat semigroup.
//!
//! Lattices with uniform weights have a separable eigenbasis (tensor products
//! of 1-D eigenvectors), so the heat kernel factorises into 1-D kernels and
//! no large eigenproblem is ever formed. Other spaces use a dense symmetric
//! eigendecomposition of `M^{-1/2} K M^{-1/2}`.

use nalgebra::DMatrix;

use super::{Grounding, LaplaceOperator};
use crate::linalg::symmetric_eigen;
use crate::{Error, Result};

/// Eigenpairs `(λ_j, φ_j)` with `φ_j` orthonormal in `L²(m)` over the unknowns.
#[derive(Debug, Clone, PartialEq)]
pub struct Eigendata {
    pub lambda: Vec<f64>,
    /// One column per eigenfunction, rows indexed by unknowns.
    pub phi: DMatrix<f64>,
}

/// 1-D factor of a separable lattice basis.
#[derive(Debug, Clone, PartialEq)]
pub struct AxisBasis {
    pub dim: usize,
    /// Eigenvalues of the 1-D operator (length⁻²).
    pub lambda: Vec<f64>,
    /// Euclidean-orthonormal eigenvectors, one per column.
    pub vectors: DMatrix<f64>,
    pub cell_mass: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Spectral {
    Dense(Eigendata),
    Separable(AxisBasis),
}

impl Spectral {
    pub fn compute(op: &LaplaceOperator) -> Result<Self> {
        let space = op.space();
        if let (Some(l), Some(cell)) = (space.lattice(), space.cell_mass()) {
            let len = match op.grounding() {
                Grounding::Dirichlet => l.side - 2,
                Grounding::Shift(_) => l.side,
            };
            let mut t = DMatrix::zeros(len, len);
            for a in 0..len {
                let interior_node =
                    matches!(op.grounding(), Grounding::Dirichlet) || (a > 0 && a + 1 < len);
                t[(a, a)] = if interior_node { 2.0 } else { 1.0 };
                if a + 1 < len {
                    t[(a, a + 1)] = -1.0;
                    t[(a + 1, a)] = -1.0;
                }
            }
            let (vals, vecs) = symmetric_eigen(t);
            let h2 = l.spacing * l.spacing;
            return Ok(Spectral::Separable(AxisBasis {
                dim: l.dim,
                lambda: vals.iter().map(|v| (v / h2).max(0.0)).collect(),
                vectors: vecs,
                cell_mass: cell,
            }));
        }
        let n = op.dim();
        let inv_sqrt: Vec<f64> = op.mass().iter().map(|m| 1.0 / m.sqrt()).collect();
        let mut s = DMatrix::zeros(n, n);
        for i in 0..n {
            for (j, v) in op.stiffness().row(i) {
                s[(i, j)] = v * inv_sqrt[i] * inv_sqrt[j];
            }
        }
        let (vals, mut vecs) = symmetric_eigen(s);
        for i in 0..n {
            for j in 0..n {
                vecs[(i, j)] *= inv_sqrt[i];
            }
        }
        if vals.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver(
                "eigendecomposition produced non-finite values".into(),
            ));
        }
        Ok(Spectral::Dense(Eigendata {
            lambda: vals.into_iter().map(|v| v.max(0.0)).collect(),
            phi: vecs,
        }))
    }

    /// Keep the `modes` lowest eigenpairs of a dense expansion. Separable
    /// bases are always complete.
    pub fn truncated(self, modes: Option<usize>) -> Self {
        match (self, modes) {
            (Spectral::Dense(e), Some(j)) if j < e.lambda.len() => Spectral::Dense(Eigendata {
                lambda: e.lambda[..j].to_vec(),
                phi: e.phi.columns(0, j).into_owned(),
            }),
            (s, _) => s,
        }
    }

    /// Number of eigenpairs.
    pub fn modes(&self) -> usize {
        match self {
            Spectral::Dense(e) => e.lambda.len(),
            Spectral::Separable(b) => b.lambda.len().pow(b.dim as u32),
        }
    }

    /// `p_t(x, ·)` on the unknowns, `x` given as unknown index.
    pub fn column(&self, t: f64, x: usize) -> Vec<f64> {
        match self {
            Spectral::Dense(e) => {
                let n = e.phi.nrows();
                let mut out = vec![0.0; n];
                for (j, &l) in e.lambda.iter().enumerate() {
                    let a = (-l * t).exp() * e.phi[(x, j)];
                    if a == 0.0 {
                        continue;
                    }
                    for (o, v) in out.iter_mut().zip(e.phi.column(j).iter()) {
                        *o += a * v;
                    }
                }
                out
            }
            Spectral::Separable(b) => {
                let k1 = b.kernel_1d(t);
                let len = b.lambda.len();
                let mut rest = x;
                let rows: Vec<Vec<f64>> = (0..b.dim)
                    .map(|_| {
                        let a = rest % len;
                        rest /= len;
                        (0..len).map(|c| k1[(a, c)]).collect()
                    })
                    .collect();
                let total = len.pow(b.dim as u32);
                let inv = 1.0 / b.cell_mass;
                (0..total)
                    .map(|y| {
                        let mut r = y;
                        let mut v = inv;
                        for row in &rows {
                            v *= row[r % len];
                            r /= len;
                        }
                        v
                    })
                    .collect()
            }
        }
    }

    /// `(P_t f)` on the unknowns; `mass` holds the weights of the unknowns.
    pub fn apply(&self, t: f64, f: &[f64], mass: &[f64]) -> Vec<f64> {
        match self {
            Spectral::Dense(e) => {
                let n = e.phi.nrows();
                let mut out = vec![0.0; n];
                for (j, &l) in e.lambda.iter().enumerate() {
                    let col = e.phi.column(j);
                    let coeff: f64 = col
                        .iter()
                        .zip(f)
                        .zip(mass)
                        .map(|((p, v), m)| p * v * m)
                        .sum::<f64>();
                    let a = (-l * t).exp() * coeff;
                    for (o, v) in out.iter_mut().zip(col.iter()) {
                        *o += a * v;
                    }
                }
                out
            }
            Spectral::Separable(b) => b.apply(&b.kernel_1d(t), f),
        }
    }

    /// Eigenvalue and eigenfunction (on the unknowns) of the lowest modes;
    /// for separable bases the products of the `per_axis` lowest 1-D modes.
    pub fn sample_modes(&self, per_axis: usize) -> Vec<(f64, Vec<f64>)> {
        match self {
            Spectral::Dense(e) => (0..per_axis.min(e.lambda.len()))
                .map(|j| (e.lambda[j], e.phi.column(j).iter().copied().collect()))
                .collect(),
            Spectral::Separable(b) => {
                let len = b.lambda.len();
                let k = per_axis.min(len);
                let combos = k.pow(b.dim as u32);
                let total = len.pow(b.dim as u32);
                let scale = 1.0 / b.cell_mass.sqrt();
                (0..combos)
                    .map(|c| {
                        let mut r = c;
                        let modes: Vec<usize> = (0..b.dim)
                            .map(|_| {
                                let m = r % k;
                                r /= k;
                                m
                            })
                            .collect();
                        let lambda = modes.iter().map(|&m| b.lambda[m]).sum();
                        let vec = (0..total)
                            .map(|y| {
                                let mut r = y;
                                let mut v = scale;
                                for &m in &modes {
                                    v *= b.vectors[(r % len, m)];
                                    r /= len;
                                }
                                v
                            })
                            .collect();
                        (lambda, vec)
                    })
                    .collect()
            }
        }
    }
}

impl AxisBasis {
    /// `k(a, b) = Σ_j e^{-λ_j t} v_j(a) v_j(b)`.
    pub fn kernel_1d(&self, t: f64) -> DMatrix<f64> {
        let len = self.lambda.len();
        let mut scaled = self.vectors.clone();
        for j in 0..len {
            let e = (-self.lambda[j] * t).exp();
            scaled.column_mut(j).scale_mut(e);
        }
        &scaled * self.vectors.transpose()
    }

    /// Apply the same 1-D matrix along every axis of a tensor.
    pub fn apply(&self, k1: &DMatrix<f64>, f: &[f64]) -> Vec<f64> {
        let len = self.lambda.len();
        let mut cur = f.to_vec();
        let mut next = vec![0.0; cur.len()];
        let mut stride = 1usize;
        for _ in 0..self.dim {
            let block = stride * len;
            for (outer, chunk) in cur.chunks(block).enumerate() {
                let base = outer * block;
                for inner in 0..stride {
                    for a in 0..len {
                        let mut s = 0.0;
                        for c in 0..len {
                            s += k1[(a, c)] * chunk[inner + c * stride];
                        }
                        next[base + inner + a * stride] = s;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
            stride *= len;
        }
        cur
    }
}
