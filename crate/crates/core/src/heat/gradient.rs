//! Discrete gradients of point functions.

use serde::{Deserialize, Serialize};

use crate::space::MmSpace;

/// How `|∇f|` is evaluated at a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GradientRule {
    /// `max_z |f(z) - f(y)| / d(y, z)` over neighbours (metric slope).
    Slope,
    /// Euclidean norm of centred differences along the lattice axes
    /// (one-sided at the box faces). Lattices only.
    Centered,
}

impl GradientRule {
    /// Centred differences on lattices, slope elsewhere.
    pub fn default_for(space: &MmSpace) -> Self {
        if space.lattice().is_some() {
            GradientRule::Centered
        } else {
            GradientRule::Slope
        }
    }
}

/// `|∇f|` at every point of the space.
pub fn gradient_magnitude(space: &MmSpace, f: &[f64], rule: GradientRule) -> Vec<f64> {
    match (rule, space.lattice()) {
        (GradientRule::Centered, Some(l)) => {
            let g = gradient_vectors(space, f).expect("lattice");
            g.chunks_exact(l.dim)
                .map(|v| v.iter().map(|c| c * c).sum::<f64>().sqrt())
                .collect()
        }
        _ => (0..space.len())
            .map(|y| {
                space
                    .neighbors(y)
                    .into_iter()
                    .map(|(z, d)| (f[z] - f[y]).abs() / d)
                    .fold(0.0, f64::max)
            })
            .collect(),
    }
}

/// Centred-difference gradient vectors on a lattice, flattened row-major
/// (`dim` components per point). `None` off lattices.
pub fn gradient_vectors(space: &MmSpace, f: &[f64]) -> Option<Vec<f64>> {
    let l = space.lattice()?;
    let n = l.dim;
    let mut out = vec![0.0; space.len() * n];
    let mut idx = [0usize; 6];
    for i in 0..space.len() {
        l.multi_index(i, &mut idx[..n]);
        let mut stride = 1usize;
        for k in 0..n {
            let a = idx[k];
            let (lo, hi, span) = if a == 0 {
                (i, i + stride, 1.0)
            } else if a + 1 == l.side {
                (i - stride, i, 1.0)
            } else {
                (i - stride, i + stride, 2.0)
            };
            out[i * n + k] = (f[hi] - f[lo]) / (span * l.spacing);
            stride *= l.side;
        }
    }
    Some(out)
}
