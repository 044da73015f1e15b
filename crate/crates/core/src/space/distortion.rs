//! Distortion coefficients of the curvature-dimension condition.

use serde::Serialize;

use crate::{Error, Result};

/// `σ` and `τ` for one `(K, N, t, θ)`. Infinite values are `f64::INFINITY`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Distortion {
    pub sigma: f64,
    pub tau: f64,
}

/// `σ_{K,N}^{(t)}(θ)`:
/// `+∞` if `Kθ² ≥ Nπ²`, `sin(tθ√(K/N)) / sin(θ√(K/N))` if `0 < Kθ² < Nπ²`,
/// `t` if `Kθ² = 0`, `sinh(tθ√(-K/N)) / sinh(θ√(-K/N))` if `Kθ² < 0`.
pub fn sigma(k: f64, n: f64, t: f64, theta: f64) -> f64 {
    let kt2 = k * theta * theta;
    if kt2 >= n * std::f64::consts::PI.powi(2) {
        f64::INFINITY
    } else if kt2 > 0.0 {
        let a = theta * (k / n).sqrt();
        (t * a).sin() / a.sin()
    } else if kt2 == 0.0 {
        t
    } else {
        let a = theta * (-k / n).sqrt();
        (t * a).sinh() / a.sinh()
    }
}

/// `σ_{K,N}^{(t)}(θ)` and `τ_{K,N}^{(t)}(θ) = t^{1/N} σ_{K,N-1}^{(t)}(θ)^{1-1/N}`.
pub fn distortion_coefficients(k: f64, n: f64, t: f64, theta: f64) -> Result<Distortion> {
    if !(n > 1.0) {
        return Err(Error::InvalidParameter(format!(
            "dimension N = {n} must exceed 1"
        )));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!("t = {t} outside [0, 1]")));
    }
    if !(theta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "θ = {theta} must be nonnegative"
        )));
    }
    let s = sigma(k, n, t, theta);
    let s1 = sigma(k, n - 1.0, t, theta);
    let tau = if s1.is_infinite() {
        f64::INFINITY
    } else {
        t.powf(1.0 / n) * s1.powf(1.0 - 1.0 / n)
    };
    Ok(Distortion { sigma: s, tau })
}
