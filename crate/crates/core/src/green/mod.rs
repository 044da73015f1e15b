//! Green functions as resolvent columns.
//!
//! `G^ε_x = ∫_ε^∞ e^{-ct} p_t(x, ·) dt` solves `(L + c) g = e^{-cε} p_ε(x, ·)`
//! for `ε > 0` and `(L + c) g = δ_x / m_x` for `ε = 0`. With `c = 0` the
//! Dirichlet-grounded operator is required; with `c > 0` any operator works.

mod estimates;
mod quasi;

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::heat::{
    gradient_magnitude, GradientRule, Grounding, HeatBackend, HeatKernel, LaplaceOperator,
};
use crate::linalg::{compensated_sum, norm2};
use crate::{Error, Result};

pub use estimates::{
    psi_tail_comparison, verify_green_estimates, write_ratio_csv, GreenEstimateReport, PairRatio,
    PsiReport,
};
pub use quasi::{
    continuity_profile, fit_g_doubling, fit_proportionality, fit_quasi_triangle, g_ball,
    midpoint_triples, quasi_metric, DgTable, GDoublingFit, ProportionalityFit, TriangleFit,
};

/// Columns whose relative residual exceeds this are rejected.
pub const RESIDUAL_TOLERANCE: f64 = 1e-8;

/// Values imposed on the eliminated boundary points when `c = 0`, `ε = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BoundaryData {
    /// Homogeneous data: the Green function of the truncated domain.
    Zero,
    /// `∫_d^∞ ds / V'(s)` of the tail model `V(s) = a s^p` evaluated at the
    /// distance to the source, i.e. `d^{2-p} / (a p (p - 2))`. On `Rⁿ` this
    /// is the free-space Green function, so the truncated box reproduces the
    /// unbounded one up to discretisation error.
    ModelFarField,
}

/// One solved column.
#[derive(Debug, Clone, Serialize)]
pub struct GreenColumn {
    pub source: usize,
    /// `G_x(y)` on all points.
    pub values: Vec<f64>,
    /// `|∇G_x|(y)` on all points.
    pub gradient: Vec<f64>,
    pub iterations: usize,
    /// `‖(K + cM) g - rhs‖ / ‖rhs‖`.
    pub residual: f64,
}

/// Lazily filled table of Green columns for one `(c, ε)`.
#[derive(Debug)]
pub struct GreenField {
    op: Arc<LaplaceOperator>,
    c: f64,
    eps: f64,
    boundary: BoundaryData,
    rule: GradientRule,
    heat: OnceLock<HeatKernel>,
    columns: RwLock<BTreeMap<usize, Arc<GreenColumn>>>,
}

impl GreenField {
    /// Validate `(c, ε)` against the operator. The boundary data default to
    /// the model far field when `c = ε = 0` and the space carries a tail model
    /// with exponent above 2, to zero otherwise.
    pub fn new(op: Arc<LaplaceOperator>, c: f64, eps: f64) -> Result<Self> {
        if !(c >= 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "shift c = {c} must be nonnegative"
            )));
        }
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "cutoff ε = {eps} must be nonnegative"
            )));
        }
        if c == 0.0 {
            match op.grounding() {
                Grounding::Shift(_) => {
                    return Err(Error::GreenUndefined(
                        "c = 0 needs Dirichlet grounding; the conservative Laplacian is singular"
                            .into(),
                    ))
                }
                Grounding::Dirichlet if op.dim() == op.space().len() => {
                    return Err(Error::GreenUndefined(
                        "c = 0 with Dirichlet grounding but no boundary points".into(),
                    ))
                }
                Grounding::Dirichlet => {}
            }
        }
        let far_field =
            c == 0.0 && eps == 0.0 && op.space().tail().is_some_and(|t| t.exponent > 2.0);
        let boundary = if far_field {
            BoundaryData::ModelFarField
        } else {
            BoundaryData::Zero
        };
        let rule = GradientRule::default_for(op.space());
        Ok(Self {
            op,
            c,
            eps,
            boundary,
            rule,
            heat: OnceLock::new(),
            columns: RwLock::new(BTreeMap::new()),
        })
    }

    pub fn with_boundary(mut self, boundary: BoundaryData) -> Result<Self> {
        if boundary == BoundaryData::ModelFarField {
            if self.c != 0.0 || self.eps != 0.0 || self.op.grounding() != Grounding::Dirichlet {
                return Err(Error::InvalidParameter(
                    "far-field boundary data apply to c = 0, ε = 0 Dirichlet columns only".into(),
                ));
            }
            match self.op.space().tail() {
                Some(t) if t.exponent > 2.0 => {}
                Some(t) => {
                    return Err(Error::NonParabolic(format!(
                        "tail exponent {} ≤ 2 has no decaying far field",
                        t.exponent
                    )))
                }
                None => {
                    return Err(Error::Precondition(
                        "far-field data need a tail model".into(),
                    ))
                }
            }
        }
        self.boundary = boundary;
        self.columns.get_mut().expect("unpoisoned").clear();
        Ok(self)
    }

    pub fn with_gradient_rule(mut self, rule: GradientRule) -> Self {
        self.rule = rule;
        self.columns.get_mut().expect("unpoisoned").clear();
        self
    }

    /// Heat kernel used for `ε > 0`; built with the automatic backend when
    /// not supplied.
    pub fn with_heat(mut self, heat: HeatKernel) -> Result<Self> {
        if !Arc::ptr_eq(heat.op(), &self.op) && heat.op().dim() != self.op.dim() {
            return Err(Error::InvalidParameter(
                "heat kernel built on another operator".into(),
            ));
        }
        self.heat = OnceLock::from(heat);
        Ok(self)
    }

    pub fn op(&self) -> &Arc<LaplaceOperator> {
        &self.op
    }

    pub fn c(&self) -> f64 {
        self.c
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn boundary(&self) -> BoundaryData {
        self.boundary
    }

    pub fn rule(&self) -> GradientRule {
        self.rule
    }

    fn heat(&self) -> Result<&HeatKernel> {
        if let Some(h) = self.heat.get() {
            return Ok(h);
        }
        let built = HeatKernel::new(self.op.clone(), HeatBackend::Auto)?;
        Ok(self.heat.get_or_init(|| built))
    }

    /// Solve the columns of `sources` not yet in the table, in parallel.
    pub fn ensure(&self, sources: &[usize]) -> Result<()> {
        if self.eps > 0.0 {
            self.heat()?;
        }
        let missing: Vec<usize> = {
            let cols = self.columns.read().expect("unpoisoned");
            let mut m: Vec<usize> = sources
                .iter()
                .copied()
                .filter(|x| !cols.contains_key(x))
                .collect();
            m.sort_unstable();
            m.dedup();
            m
        };
        let solved: Vec<GreenColumn> = missing
            .par_iter()
            .map(|&x| self.solve(x))
            .collect::<Result<_>>()?;
        let mut cols = self.columns.write().expect("unpoisoned");
        for col in solved {
            cols.insert(col.source, Arc::new(col));
        }
        Ok(())
    }

    /// The column of `x`, solving it if needed.
    pub fn column(&self, x: usize) -> Result<Arc<GreenColumn>> {
        self.ensure(&[x])?;
        Ok(self.cached(x).expect("ensured"))
    }

    /// The column of `x` if already solved.
    pub fn cached(&self, x: usize) -> Option<Arc<GreenColumn>> {
        self.columns.read().expect("unpoisoned").get(&x).cloned()
    }

    pub fn sources(&self) -> Vec<usize> {
        self.columns
            .read()
            .expect("unpoisoned")
            .keys()
            .copied()
            .collect()
    }

    /// `G(x, y)` from whichever of the two columns is available.
    pub fn value(&self, x: usize, y: usize) -> Option<f64> {
        let cols = self.columns.read().expect("unpoisoned");
        cols.get(&x)
            .map(|c| c.values[y])
            .or_else(|| cols.get(&y).map(|c| c.values[x]))
    }

    fn solve(&self, x: usize) -> Result<GreenColumn> {
        let op = &self.op;
        let space = op.space();
        let sx = op
            .slot(x)
            .ok_or_else(|| Error::Precondition(format!("source {x} is not an interior point")))?;
        let n = op.dim();
        let mut rhs = vec![0.0; n];
        let mut boundary_values = vec![0.0; space.len()];
        if self.eps > 0.0 {
            let heat = self.heat.get().expect("built in ensure");
            let p = heat.column(self.eps, x)?;
            let damp = (-self.c * self.eps).exp();
            for (k, &i) in op.active().iter().enumerate() {
                rhs[k] = damp * p[i] * op.mass()[k];
            }
        } else {
            rhs[sx] = 1.0;
            if self.boundary == BoundaryData::ModelFarField {
                let t = space.tail().expect("checked in with_boundary");
                let p = t.exponent;
                let scale = 1.0 / (t.coefficient * p * (p - 2.0));
                for i in 0..space.len() {
                    if op.slot(i).is_none() {
                        boundary_values[i] = scale * space.dist(x, i).powf(2.0 - p);
                    }
                }
                // Move the known boundary values to the right-hand side.
                for (k, &i) in op.active().iter().enumerate() {
                    let mi = space.weight(i);
                    for (j, len) in space.neighbors(i) {
                        if op.slot(j).is_none() {
                            rhs[k] +=
                                0.5 * (mi + space.weight(j)) / (len * len) * boundary_values[j];
                        }
                    }
                }
            }
        }
        let (u, stats) = op.solve_shifted(self.c, &rhs, None)?;
        let a = op.stiffness().add_diagonal(self.c, op.mass());
        let mut r = a.mul_vec(&u);
        for (ri, bi) in r.iter_mut().zip(&rhs) {
            *ri -= bi;
        }
        let residual = norm2(&r) / norm2(&rhs).max(f64::MIN_POSITIVE);
        if !(residual <= RESIDUAL_TOLERANCE) {
            return Err(Error::Solver(format!(
                "Green column {x}: residual {residual:e} after {} iterations",
                stats.iterations
            )));
        }
        let mut values = op.expand(&u);
        for (v, b) in values.iter_mut().zip(&boundary_values) {
            if *b != 0.0 {
                *v = *b;
            }
        }
        let gradient = gradient_magnitude(space, &values, self.rule);
        Ok(GreenColumn {
            source: x,
            values,
            gradient,
            iterations: stats.iterations,
            residual,
        })
    }
}

/// Convenience: a single column of `G^ε` with shift `c`.
pub fn green_column(op: Arc<LaplaceOperator>, c: f64, eps: f64, x: usize) -> Result<GreenColumn> {
    let field = GreenField::new(op, c, eps)?;
    Ok((*field.column(x)?).clone())
}

/// `∫ (Ḡ_x - Ḡ^ε_x) dm` against its closed form `(1 - e^{-cε})/c` (which is
/// `ε` when `c = 0`), valid for conservative operators.
#[derive(Debug, Clone, Serialize)]
pub struct CutoffMassReport {
    pub source: usize,
    pub eps: f64,
    pub observed: f64,
    pub expected: f64,
    pub relative_error: f64,
}

pub fn cutoff_mass_defect(
    op: Arc<LaplaceOperator>,
    heat: &HeatKernel,
    c: f64,
    eps: f64,
    x: usize,
) -> Result<CutoffMassReport> {
    let full = GreenField::new(op.clone(), c, 0.0)?.with_boundary(BoundaryData::Zero)?;
    let cut = GreenField::new(op.clone(), c, eps)?.with_heat(heat.clone())?;
    let (a, b) = (full.column(x)?, cut.column(x)?);
    let w = op.space().weights();
    let observed = compensated_sum((0..w.len()).map(|i| (a.values[i] - b.values[i]) * w[i]));
    let expected = if c == 0.0 {
        eps
    } else {
        (1.0 - (-c * eps).exp()) / c
    };
    Ok(CutoffMassReport {
        source: x,
        eps,
        observed,
        expected,
        relative_error: (observed - expected).abs() / expected,
    })
}

/// `max_y |G^{α+t}_x(y) - (P_t G^α_x)(y)| / max_y G^{α+t}_x(y)`.
pub fn semigroup_shift_residual(
    heat: &HeatKernel,
    c: f64,
    alpha: f64,
    t: f64,
    x: usize,
) -> Result<f64> {
    let op = heat.op().clone();
    let a = GreenField::new(op.clone(), c, alpha)?.with_heat(heat.clone())?;
    let b = GreenField::new(op, c, alpha + t)?.with_heat(heat.clone())?;
    let ga = a.column(x)?;
    let gb = b.column(x)?;
    // Ḡ^{α+t} = e^{-ct} P_t Ḡ^α; the factor is 1 when c = 0.
    let damp = (-c * t).exp();
    let shifted = heat.semigroup(t, &ga.values)?;
    let scale = gb.values.iter().copied().fold(0.0, f64::max);
    Ok(shifted
        .iter()
        .zip(&gb.values)
        .map(|(s, g)| (damp * s - g).abs())
        .fold(0.0, f64::max)
        / scale)
}
