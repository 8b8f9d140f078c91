//! CIR intensity analytics: diffusion coefficients, the exponential-affine
//! survival factors A(τ), B(τ), and the classical reduced-form bond price used
//! as benchmark and boundary ingredient.

use crate::error::{Error, Result};
use crate::params::CirParams;

/// Closed-form survival factors over a horizon τ:
/// E[e^{−∫λ} | λ_0] = A e^{−B λ_0}.
#[derive(Debug, Clone, Copy)]
pub struct SurvivalFactors {
    /// Multiplicative factor A, in (0, 1].
    pub a: f64,
    /// Exposure factor B in years, nondecreasing in τ, in [0, 2/(α+ξ)).
    pub b: f64,
    /// ξ = √(α² + 2φ²).
    pub xi: f64,
}

fn check_nonnegative(x: f64, field: &'static str) -> Result<()> {
    if x >= 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            field,
            reason: format!("must be finite and >= 0, got {x}"),
        })
    }
}

/// Mean-reversion drift b(y) = α(λ̄ − y).
pub fn drift_b(y: f64, cir: &CirParams) -> Result<f64> {
    check_nonnegative(y, "y")?;
    Ok(cir.alpha * (cir.lambda_bar - y))
}

/// Square-root volatility a(y) = φ√y; exactly zero at y = 0.
pub fn vol_a(y: f64, cir: &CirParams) -> Result<f64> {
    check_nonnegative(y, "y")?;
    Ok(cir.phi * y.sqrt())
}

/// log A and B in a form that never overflows: everything is written in terms
/// of E = e^{−ξτ} ∈ (0, 1], so arbitrarily long horizons stay finite (B tends
/// to 2/(α+ξ) and log A decays linearly in τ).
fn factors_log(tau: f64, cir: &CirParams) -> (f64, f64, f64) {
    let xi = (cir.alpha * cir.alpha + 2.0 * cir.phi * cir.phi).sqrt();
    let e = (-xi * tau).exp();
    // D = 2ξ + (α+ξ)(e^{ξτ} − 1) = e^{ξτ} · d_norm
    let d_norm = 2.0 * xi * e + (cir.alpha + xi) * (1.0 - e);
    let b = 2.0 * (1.0 - e) / d_norm;
    let exponent = 2.0 * cir.alpha * cir.lambda_bar / (cir.phi * cir.phi);
    let log_a = exponent * ((2.0 * xi / d_norm).ln() + 0.5 * (cir.alpha - xi) * tau);
    (log_a, b, xi)
}

/// Survival factors at horizon `tau >= 0`.
pub fn survival_factors(tau: f64, cir: &CirParams) -> Result<SurvivalFactors> {
    check_nonnegative(tau, "tau")?;
    let (log_a, b, xi) = factors_log(tau, cir);
    Ok(SurvivalFactors {
        a: log_a.exp(),
        b,
        xi,
    })
}

/// P(no default over τ | λ_0 = lambda0) = A e^{−B lambda0}, pre-default.
pub fn survival_prob(lambda0: f64, tau: f64, cir: &CirParams) -> Result<f64> {
    check_nonnegative(lambda0, "lambda0")?;
    check_nonnegative(tau, "tau")?;
    let (log_a, b, _) = factors_log(tau, cir);
    Ok((log_a - b * lambda0).exp())
}

/// Classical reduced-form price of the defaultable zero-coupon bond,
/// e^{−rT} · survival. T = 0 gives price 1.
pub fn classical_price(lambda0: f64, maturity: f64, r: f64, cir: &CirParams) -> Result<f64> {
    check_nonnegative(maturity, "maturity")?;
    Ok((-r * maturity).exp() * survival_prob(lambda0, maturity, cir)?)
}

/// Classical yield spread −(1/τ)·log(survival); the τ = 0 value is the right
/// limit, which is lambda0 itself.
pub fn classical_spread(lambda0: f64, tau: f64, cir: &CirParams) -> Result<f64> {
    check_nonnegative(lambda0, "lambda0")?;
    check_nonnegative(tau, "tau")?;
    if tau == 0.0 {
        return Ok(lambda0);
    }
    let (log_a, b, _) = factors_log(tau, cir);
    Ok((b * lambda0 - log_a) / tau)
}
