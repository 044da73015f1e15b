//! Composite trapezoid quadrature on logarithmically spaced nodes.
//!
//! Every integrand handled here is a smooth power law on a log scale, so the
//! rule is applied in the variable `u = ln s` with an Euler-Maclaurin endpoint
//! correction. Infinite upper limits are closed with the analytic remainder of
//! the locally fitted power law.

/// Default grid density.
pub const NODES_PER_DECADE: usize = 64;

/// Decades integrated numerically before the analytic power-law remainder.
pub const TAIL_DECADES: f64 = 12.0;

/// The integrand does not decay fast enough for the integral to converge.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Divergent {
    /// Fitted decay exponent q of the integrand `~ s^-q` at the cut.
    pub exponent: f64,
}

/// `∫_a^b f(s) ds` for `0 < a < b`.
pub fn log_trapezoid<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, nodes_per_decade: usize) -> f64 {
    assert!(a > 0.0 && b >= a, "log_trapezoid needs 0 < a <= b");
    if b == a {
        return 0.0;
    }
    let (ua, ub) = (a.ln(), b.ln());
    let decades = (ub - ua) / std::f64::consts::LN_10;
    let steps = ((decades * nodes_per_decade as f64).ceil() as usize).max(8);
    let du = (ub - ua) / steps as f64;
    let g = |u: f64| {
        let s = u.exp();
        f(s) * s
    };
    let vals: Vec<f64> = (0..=steps).map(|k| g(ua + k as f64 * du)).collect();
    let inner: f64 = vals[1..steps].iter().sum();
    let trap = du * (0.5 * (vals[0] + vals[steps]) + inner);
    // Euler-Maclaurin: subtract du^2/12 (g'(b) - g'(a)), one-sided 5-point slopes.
    let slope = |v: [f64; 5]| {
        (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / (12.0 * du)
    };
    let da = slope([vals[0], vals[1], vals[2], vals[3], vals[4]]);
    let s = steps;
    let db = -slope([vals[s], vals[s - 1], vals[s - 2], vals[s - 3], vals[s - 4]]);
    trap - du * du / 12.0 * (db - da)
}

/// `∫_a^∞ f(s) ds` for an integrand with power-law decay.
pub fn tail_integral<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    nodes_per_decade: usize,
) -> Result<f64, Divergent> {
    let b = a * 10f64.powf(TAIL_DECADES);
    let body = log_trapezoid(&f, a, b, nodes_per_decade);
    let lambda = 1.5;
    let (fb, fprev) = (f(b), f(b / lambda));
    if fb == 0.0 {
        return Ok(body);
    }
    let q = -(fb / fprev).ln() / lambda.ln();
    if !q.is_finite() || q <= 1.0 + 1e-3 {
        return Err(Divergent { exponent: q });
    }
    Ok(body + fb * b / (q - 1.0))
}
