//! Measure-weighted Laplacians and their heat kernels.
//!
//! The Laplacian of a space is `(L f)_i = (1/m_i) Σ_j w_ij (f_i - f_j)` with
//! conductances `w_ij = ((m_i + m_j)/2) / ℓ_ij²`; on a lattice with Lebesgue
//! weights this is the standard `(2n, -1, ..., -1)/h²` stencil. Internally the
//! operator is stored as a symmetric stiffness matrix `K` and a diagonal mass
//! `M`, so that `L = M⁻¹ K`.

mod cache;
mod gradient;
mod spectral;
mod stepping;
mod verify;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::linalg::{conjugate_gradient, CsrMatrix, SolveStats};
use crate::space::MmSpace;
use crate::{Error, Result};

pub use cache::{read_eigendata, write_eigendata};
pub use gradient::{gradient_magnitude, gradient_vectors, GradientRule};
pub use spectral::{Eigendata, Spectral};
pub use stepping::{crank_nicolson, STEPS_PER_COLUMN};
pub use verify::{
    fit_gaussian_bounds, verify_heat_properties, GaussianFit, HeatPropertyReport,
    DEFAULT_CONSTANT_CAP,
};

/// Spaces up to this many points use the spectral backend by default.
pub const SPECTRAL_POINT_LIMIT: usize = 4000;

/// Relative tolerance of linear solves.
pub const SOLVE_TOLERANCE: f64 = 1e-11;

/// Boundary treatment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Grounding {
    /// Boundary points carry homogeneous Dirichlet data and are removed.
    Dirichlet,
    /// All points are active (conservative operator); Green functions use the
    /// shift `c > 0`.
    Shift(f64),
}

/// Heat kernel representation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HeatBackend {
    /// Spectral when the space has at most [`SPECTRAL_POINT_LIMIT`] points or
    /// is a lattice (separable eigenbasis), stepping otherwise.
    Auto,
    /// Eigen-expansion truncated to `modes` terms (all when `None`).
    Spectral { modes: Option<usize> },
    /// Crank-Nicolson with `steps` steps per evaluation.
    Stepping { steps: usize },
}

/// Self-adjoint nonnegative operator on the active points of a space.
#[derive(Debug, Clone)]
pub struct LaplaceOperator {
    space: Arc<MmSpace>,
    grounding: Grounding,
    active: Vec<usize>,
    slot: Vec<usize>,
    stiffness: CsrMatrix,
    mass: Vec<f64>,
}

const INACTIVE: usize = usize::MAX;

/// Assemble the Laplacian of `space` with the given boundary treatment.
pub fn assemble_laplacian(space: Arc<MmSpace>, grounding: Grounding) -> Result<LaplaceOperator> {
    if let Grounding::Shift(c) = grounding {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "shift {c} must be nonnegative"
            )));
        }
    }
    let n = space.len();
    let is_active = |i: usize| match grounding {
        Grounding::Dirichlet => space.is_interior(i),
        Grounding::Shift(_) => true,
    };
    let mut slot = vec![INACTIVE; n];
    let mut active = Vec::new();
    for i in 0..n {
        if is_active(i) {
            slot[i] = active.len();
            active.push(i);
        }
    }
    if active.is_empty() {
        return Err(Error::InvalidParameter("no active points".into()));
    }
    let mut rows = Vec::with_capacity(active.len());
    for &i in &active {
        let nb = space.neighbors(i);
        if nb.is_empty() {
            return Err(Error::InvalidParameter(format!(
                "point {i} has no neighbours"
            )));
        }
        let mi = space.weight(i);
        let mut row = Vec::with_capacity(nb.len() + 1);
        let mut diag = 0.0;
        for (j, len) in nb {
            let w = 0.5 * (mi + space.weight(j)) / (len * len);
            diag += w;
            if slot[j] != INACTIVE {
                row.push((slot[j], -w));
            }
        }
        row.push((slot[i], diag));
        rows.push(row);
    }
    let mass = active.iter().map(|&i| space.weight(i)).collect();
    Ok(LaplaceOperator {
        space,
        grounding,
        active,
        slot,
        stiffness: CsrMatrix::from_rows(rows),
        mass,
    })
}

impl LaplaceOperator {
    pub fn space(&self) -> &Arc<MmSpace> {
        &self.space
    }

    pub fn grounding(&self) -> Grounding {
        self.grounding
    }

    /// Number of unknowns.
    pub fn dim(&self) -> usize {
        self.active.len()
    }

    pub fn active(&self) -> &[usize] {
        &self.active
    }

    /// Unknown index of a space point, `None` for eliminated boundary points.
    pub fn slot(&self, i: usize) -> Option<usize> {
        (self.slot[i] != INACTIVE).then_some(self.slot[i])
    }

    pub fn stiffness(&self) -> &CsrMatrix {
        &self.stiffness
    }

    pub fn mass(&self) -> &[f64] {
        &self.mass
    }

    /// Spread unknowns to a full point vector (zero on inactive points).
    pub fn expand(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.space.len()];
        for (k, &i) in self.active.iter().enumerate() {
            out[i] = u[k];
        }
        out
    }

    /// Restrict a full point vector to the unknowns.
    pub fn restrict(&self, f: &[f64]) -> Vec<f64> {
        self.active.iter().map(|&i| f[i]).collect()
    }

    /// `L f` on the unknowns, for `f` given on the unknowns.
    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        let mut y = self.stiffness.mul_vec(f);
        for (v, m) in y.iter_mut().zip(&self.mass) {
            *v /= m;
        }
        y
    }

    /// `⟨f, g⟩_m` over the unknowns.
    pub fn inner(&self, f: &[f64], g: &[f64]) -> f64 {
        crate::linalg::compensated_sum(f.iter().zip(g).zip(&self.mass).map(|((a, b), m)| a * b * m))
    }

    /// Solve `(K + c M) u = rhs` on the unknowns.
    pub fn solve_shifted(
        &self,
        c: f64,
        rhs: &[f64],
        guess: Option<&[f64]>,
    ) -> Result<(Vec<f64>, SolveStats)> {
        let a = self.stiffness.add_diagonal(c, &self.mass);
        let n = self.dim();
        conjugate_gradient(&a, rhs, guess, SOLVE_TOLERANCE, 20 * n + 1000)
    }

    /// Smallest spacing of the underlying sample (lattice spacing, shortest edge).
    pub fn resolution(&self) -> f64 {
        match self.space.lattice() {
            Some(l) => l.spacing,
            None => self
                .space
                .edges()
                .iter()
                .map(|e| e.2)
                .fold(f64::INFINITY, f64::min),
        }
    }

    /// Choose the concrete backend for `Auto`.
    pub fn resolve_backend(&self, backend: HeatBackend) -> HeatBackend {
        match backend {
            HeatBackend::Auto
                if self.space.lattice().is_some() || self.dim() <= SPECTRAL_POINT_LIMIT =>
            {
                HeatBackend::Spectral { modes: None }
            }
            HeatBackend::Auto => HeatBackend::Stepping {
                steps: STEPS_PER_COLUMN,
            },
            other => other,
        }
    }
}

/// Heat kernel evaluator bound to an operator and a backend.
#[derive(Debug, Clone)]
pub struct HeatKernel {
    op: Arc<LaplaceOperator>,
    backend: HeatBackend,
    spectral: Option<Arc<Spectral>>,
}

impl HeatKernel {
    pub fn new(op: Arc<LaplaceOperator>, backend: HeatBackend) -> Result<Self> {
        let backend = op.resolve_backend(backend);
        let spectral = match backend {
            HeatBackend::Spectral { modes } => {
                let s = Spectral::compute(&op)?;
                if let Some(j) = modes {
                    if j > op.dim() {
                        return Err(Error::InvalidParameter(format!(
                            "{j} spectral modes requested for {} unknowns",
                            op.dim()
                        )));
                    }
                }
                Some(Arc::new(s.truncated(modes)))
            }
            HeatBackend::Stepping { steps } => {
                if steps == 0 {
                    return Err(Error::InvalidParameter("zero time steps".into()));
                }
                None
            }
            HeatBackend::Auto => unreachable!("resolved above"),
        };
        Ok(Self {
            op,
            backend,
            spectral,
        })
    }

    /// Reuse precomputed eigendata.
    pub fn from_spectral(op: Arc<LaplaceOperator>, spectral: Arc<Spectral>) -> Self {
        Self {
            op,
            backend: HeatBackend::Spectral { modes: None },
            spectral: Some(spectral),
        }
    }

    pub fn op(&self) -> &Arc<LaplaceOperator> {
        &self.op
    }

    pub fn backend(&self) -> HeatBackend {
        self.backend
    }

    pub fn spectral(&self) -> Option<&Arc<Spectral>> {
        self.spectral.as_ref()
    }

    /// `p_t(x, ·)` on all points of the space (zero on eliminated points).
    pub fn column(&self, t: f64, x: usize) -> Result<Vec<f64>> {
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "heat time {t} must be positive"
            )));
        }
        let sx = self
            .op
            .slot(x)
            .ok_or_else(|| Error::InvalidParameter(format!("point {x} is not active")))?;
        match (&self.spectral, self.backend) {
            (Some(s), _) => Ok(self.op.expand(&s.column(t, sx))),
            (None, HeatBackend::Stepping { steps }) => {
                let mut u0 = vec![0.0; self.op.dim()];
                u0[sx] = 1.0 / self.op.mass()[sx];
                Ok(self.op.expand(&crank_nicolson(&self.op, &u0, t, steps)?))
            }
            _ => unreachable!("backend resolved at construction"),
        }
    }

    /// `P_t f = ∫ p_t(·, y) f(y) dm(y)` for `f` on all points.
    pub fn semigroup(&self, t: f64, f: &[f64]) -> Result<Vec<f64>> {
        if t == 0.0 {
            let mut g = self.op.restrict(f);
            g = self.op.expand(&g);
            return Ok(g);
        }
        if !(t > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "heat time {t} must be positive"
            )));
        }
        let u = self.op.restrict(f);
        match (&self.spectral, self.backend) {
            (Some(s), _) => Ok(self.op.expand(&s.apply(t, &u, self.op.mass()))),
            (None, HeatBackend::Stepping { steps }) => {
                Ok(self.op.expand(&crank_nicolson(&self.op, &u, t, steps)?))
            }
            _ => unreachable!("backend resolved at construction"),
        }
    }
}
