//! The singular value function φ^s(T).
//!
//! For 0 < s ≤ d with m−1 < s ≤ m:
//!
//! ```text
//! φ^s(T) = α₁ α₂ … α_{m−1} · α_m^{s−m+1}
//! ```
//!
//! and φ^s(T) = |det T|^{s/d} for s > d. φ⁰ ≡ 1.
//!
//! Estimators only use the log-domain forms; deep products underflow `f64`
//! long before the traversals stop.

use serde::Serialize;

use crate::error::SvfError;
use crate::linalg::{singular_values, Matrix};

/// `ln φ^s(T)` together with the exponent it was taken at.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LogPhi {
    pub log_value: f64,
    pub s: f64,
}

/// Index m (1-based) with m−1 < s ≤ m. Integer s maps to itself.
pub fn branch_index(s: f64) -> usize {
    if s <= 0.0 {
        return 0;
    }
    s.ceil() as usize
}

fn check_exponent(s: f64) -> Result<(), SvfError> {
    if s.is_nan() || s < 0.0 {
        return Err(SvfError::NegativeExponent(s));
    }
    Ok(())
}

/// φ^s(T) evaluated directly on the singular values.
pub fn phi(t: &Matrix, s: f64) -> Result<f64, SvfError> {
    check_exponent(s)?;
    let sv = singular_values(t)?;
    if s == 0.0 {
        return Ok(1.0);
    }
    let d = t.dim();
    let m = branch_index(s);
    if m > d {
        return Ok(sv.product().powf(s / d as f64));
    }
    let head: f64 = sv.values()[..m - 1].iter().product();
    Ok(head * sv.values()[m - 1].powf(s - (m as f64) + 1.0))
}

/// `ln φ^s(T)`.
pub fn log_phi(t: &Matrix, s: f64) -> Result<LogPhi, SvfError> {
    check_exponent(s)?;
    let sv = singular_values(t)?;
    let logs: Vec<f64> = sv.values().iter().map(|a| a.ln()).collect();
    Ok(LogPhi {
        log_value: log_phi_from_log_sv(&logs, s),
        s,
    })
}

/// `ln φ^s` from the logs of the singular values (descending). `s ≥ 0` is
/// assumed.
pub fn log_phi_from_log_sv(log_sv: &[f64], s: f64) -> f64 {
    if s == 0.0 {
        return 0.0;
    }
    let d = log_sv.len();
    let m = branch_index(s);
    if m > d {
        let log_det: f64 = log_sv.iter().sum();
        return log_det * s / d as f64;
    }
    let head: f64 = log_sv[..m - 1].iter().sum();
    head + (s - m as f64 + 1.0) * log_sv[m - 1]
}
