//! Crank-Nicolson time stepping of `M u' = -K u`.

use super::{LaplaceOperator, SOLVE_TOLERANCE};
use crate::linalg::conjugate_gradient;
use crate::Result;

/// Default number of steps per heat evaluation (`δt = t / 256`).
pub const STEPS_PER_COLUMN: usize = 256;

/// Advance `u0` (values on the unknowns) to time `t` in `steps` equal steps.
pub fn crank_nicolson(op: &LaplaceOperator, u0: &[f64], t: f64, steps: usize) -> Result<Vec<f64>> {
    let dt = t / steps as f64;
    let half = op.stiffness().scaled(0.5 * dt);
    let lhs = half.add_diagonal(1.0, op.mass());
    let n = op.dim();
    let mut u = u0.to_vec();
    let mut rhs = vec![0.0; n];
    for _ in 0..steps {
        half.mul_vec_into(&u, &mut rhs);
        for ((r, m), ui) in rhs.iter_mut().zip(op.mass()).zip(&u) {
            *r = m * ui - *r;
        }
        let (next, _) = conjugate_gradient(&lhs, &rhs, Some(&u), SOLVE_TOLERANCE, 10 * n + 500)?;
        u = next;
    }
    Ok(u)
}
