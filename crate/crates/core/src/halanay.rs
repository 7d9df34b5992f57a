//! Delayed convergence rates and the exponential/ISS envelopes they imply.
//!
//! The central quantity is the rate `λ̂`, the unique positive root of
//! `λ - σ̄ + σ·exp(λ τ_max) = 0` for margins `σ̄ > σ ≥ 0`. A system whose
//! scalar comparison obeys `u̇ ≤ -σ̄ u + σ sup u + c` then satisfies
//! `u(t) ≤ sup u₀ · exp(-λ̂ (t - t₀)) + c / (σ̄ - σ)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum HalanayError {
    #[error("infeasible margins: sigma_bar {sigma_bar} must exceed sigma_under {sigma_under}")]
    InfeasibleMargins { sigma_bar: f64, sigma_under: f64 },
    #[error("invalid margin field: {0}")]
    InvalidField(&'static str),
    #[error("negative input: {0}")]
    NegativeInput(&'static str),
}

/// Contraction margins of a delayed system: delay-free margin `σ̄`, delayed
/// coupling bound `σ` and the delay bound itself.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionMargins {
    sigma_bar: f64,
    sigma_under: f64,
    tau_max: f64,
}

impl ContractionMargins {
    /// Requires `σ̄ > σ ≥ 0` and a finite nonnegative delay bound.
    pub fn new(sigma_bar: f64, sigma_under: f64, tau_max: f64) -> Result<Self, HalanayError> {
        if !sigma_bar.is_finite() || !sigma_under.is_finite() {
            return Err(HalanayError::InvalidField("non-finite margin"));
        }
        if !(sigma_under >= 0.0) {
            return Err(HalanayError::InvalidField("sigma_under must be nonnegative"));
        }
        if !(sigma_bar > sigma_under) {
            return Err(HalanayError::InfeasibleMargins { sigma_bar, sigma_under });
        }
        if !tau_max.is_finite() || tau_max < 0.0 {
            return Err(HalanayError::InvalidField("tau_max must be finite and nonnegative"));
        }
        Ok(ContractionMargins { sigma_bar, sigma_under, tau_max })
    }

    pub fn sigma_bar(&self) -> f64 {
        self.sigma_bar
    }

    pub fn sigma_under(&self) -> f64 {
        self.sigma_under
    }

    pub fn tau_max(&self) -> f64 {
        self.tau_max
    }

    /// `σ̄ - σ`, the delay-free net margin.
    pub fn net_margin(&self) -> f64 {
        self.sigma_bar - self.sigma_under
    }
}

/// Residual of the rate equation at `λ`.
pub fn rate_residual(m: &ContractionMargins, lambda: f64) -> f64 {
    lambda - m.sigma_bar + m.sigma_under * (lambda * m.tau_max).exp()
}

/// The convergence rate `λ̂`: unique positive root of
/// `λ - σ̄ + σ·exp(λ τ_max)` found by bisection on `[0, σ̄]`.
///
/// The bracket is always valid: the residual at 0 is `σ - σ̄ < 0` and at `σ̄`
/// it is `σ·exp(σ̄ τ) ≥ 0`. For a time-varying delay the infimum over time is
/// attained at `τ_max` (the root decreases in the delay), so the bound alone
/// suffices.
pub fn convergence_rate(m: &ContractionMargins) -> f64 {
    let mut lo = 0.0;
    let mut hi = m.sigma_bar;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate_residual(m, mid) > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exponential-plus-offset envelope for the delayed comparison inequality:
/// `u₀ · exp(-λ̂ Δt) + c / (σ̄ - σ)`.
pub fn halanay_envelope(
    u0_sup: f64,
    c: f64,
    m: &ContractionMargins,
    t_minus_t0: f64,
) -> Result<f64, HalanayError> {
    if !(u0_sup >= 0.0) {
        return Err(HalanayError::NegativeInput("u0_sup"));
    }
    if !(c >= 0.0) {
        return Err(HalanayError::NegativeInput("c"));
    }
    if !(t_minus_t0 >= 0.0) {
        return Err(HalanayError::NegativeInput("t_minus_t0"));
    }
    let rate = convergence_rate(m);
    Ok(u0_sup * (-rate * t_minus_t0).exp() + c / m.net_margin())
}

/// Coefficients of the input-to-state scalability bound: DC gain
/// `κ/(σ̄-σ)`, transient amplification `κ` and decay rate `λ̂`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalabilityBoundCoeffs {
    pub kappa: f64,
    pub gain_dc: f64,
    pub rate: f64,
}

impl ScalabilityBoundCoeffs {
    pub fn new(kappa: f64, m: &ContractionMargins) -> Self {
        ScalabilityBoundCoeffs {
            kappa,
            gain_dc: kappa / m.net_margin(),
            rate: convergence_rate(m),
        }
    }
}

/// The three-term deviation bound: uniform in the network size, it caps
/// `max_i |x_i(t) - x_i*(t)|_p` by
/// `gain_dc·‖w‖ + κ·exp(-λ̂ Δt)·(initial state deviation + initial ζ mass)`.
pub fn iss_bound(
    coeffs: &ScalabilityBoundCoeffs,
    w_sup: f64,
    x0_dev_sup: f64,
    zeta0_sup: f64,
    t_minus_t0: f64,
) -> f64 {
    coeffs.gain_dc * w_sup
        + coeffs.kappa * (-coeffs.rate * t_minus_t0).exp() * (x0_dev_sup + zeta0_sup)
}

/// Output-deviation bound through a Lipschitz output map.
pub fn output_bound(iss: f64, lipschitz_g: f64) -> f64 {
    lipschitz_g * iss
}
