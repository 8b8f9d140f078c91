//! Validated parameter containers and the derived scalars used everywhere
//! else.
//!
//! All downstream code consumes a [`ValidatedConfig`] produced by
//! [`validate`]; the raw parameter structs are plain data and carry no
//! guarantees on their own.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Market and preference parameters.
///
/// `excess_return` is the drift of the traded stock *after* subtracting the
/// risk-free rate; it enters the PDE coefficients directly. Use
/// [`MarketParams::from_raw_drift`] when the quoted drift still contains the
/// risk-free rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Excess return of the stock, per year.
    pub excess_return: f64,
    /// Stock volatility, per sqrt(year). Strictly positive.
    pub volatility: f64,
    /// Risk-free rate, per year. Nonnegative.
    pub risk_free_rate: f64,
    /// Instantaneous correlation between stock and intensity shocks,
    /// strictly inside (-1, 1).
    pub correlation: f64,
    /// Absolute risk-aversion coefficient, per currency unit, in (0, 10].
    pub risk_aversion: f64,
}

impl MarketParams {
    /// Convenience constructor for inputs quoted as a raw drift; the excess
    /// return is `raw_drift - risk_free_rate`.
    pub fn from_raw_drift(
        raw_drift: f64,
        volatility: f64,
        risk_free_rate: f64,
        correlation: f64,
        risk_aversion: f64,
    ) -> Self {
        Self {
            excess_return: raw_drift - risk_free_rate,
            volatility,
            risk_free_rate,
            correlation,
            risk_aversion,
        }
    }

    /// Distortion power θ = ρ² / (1 − ρ²).
    pub fn distortion_theta(&self) -> f64 {
        let rho2 = self.correlation * self.correlation;
        rho2 / (1.0 - rho2)
    }

    /// Squared-Sharpe decay rate m = μ² / (2σ²).
    pub fn sharpe_term(&self) -> f64 {
        self.excess_return * self.excess_return / (2.0 * self.volatility * self.volatility)
    }
}

/// CIR intensity parameters: dλ = α(λ̄ − λ)dt + φ√λ dW.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CirParams {
    /// Mean-reversion speed α, per year. Strictly positive.
    pub alpha: f64,
    /// Long-run intensity level λ̄, per year. Strictly positive.
    pub lambda_bar: f64,
    /// Volatility-of-intensity φ, per sqrt(year). Strictly positive.
    pub phi: f64,
}

impl CirParams {
    /// Whether 2αλ̄ > φ² holds, i.e. the intensity stays strictly positive.
    /// Recorded but never enforced: the non-Feller regime is still
    /// nonnegative and perfectly priceable.
    pub fn feller(&self) -> bool {
        2.0 * self.alpha * self.lambda_bar > self.phi * self.phi
    }
}

/// Discretization of one maturity horizon.
///
/// The intensity axis spans `[0, y_max]` with `n_interior` interior nodes
/// (spacing Δy = y_max / (n_interior + 1)); the time axis spans
/// `[0, maturity]` in `time_intervals + 1` steps of Δt = T / (M + 1).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    /// Upper end of the intensity grid (the lower end is fixed at 0).
    pub y_max: f64,
    /// Number of interior intensity nodes N; at least 3.
    pub n_interior: usize,
    /// Time sub-interval count parameter M; the march takes M + 1 steps.
    pub time_intervals: usize,
    /// Maturity T in years, strictly positive.
    pub maturity: f64,
}

impl GridSpec {
    pub fn dy(&self) -> f64 {
        self.y_max / (self.n_interior as f64 + 1.0)
    }

    pub fn dt(&self) -> f64 {
        self.maturity / (self.time_intervals as f64 + 1.0)
    }

    /// Intensity at node `j`, for `j` in `0..=n_interior + 1`.
    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.dy()
    }

    /// Total node count N + 2 including both boundary nodes.
    pub fn n_nodes(&self) -> usize {
        self.n_interior + 2
    }

    /// Total stored time levels M + 2 including the final-condition level.
    pub fn n_levels(&self) -> usize {
        self.time_intervals + 2
    }
}

/// Which of the three value factors a march computes. The only difference
/// between them is the scale multiplying the reaction source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AgentKind {
    /// Optimal investment with no bond position.
    Merton,
    /// Holder of one unit of the defaultable bond.
    Buyer,
    /// Writer of one unit of the defaultable bond.
    Seller,
}

impl AgentKind {
    /// Source scale s ∈ {1, e^{γc}, e^{−γc}} given γc = risk aversion times
    /// discounted face value.
    pub fn source_scale(self, gamma_c: f64) -> f64 {
        match self {
            AgentKind::Merton => 1.0,
            AgentKind::Buyer => gamma_c.exp(),
            AgentKind::Seller => (-gamma_c).exp(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            AgentKind::Merton => "merton",
            AgentKind::Buyer => "buyer",
            AgentKind::Seller => "seller",
        }
    }
}

/// Parameter bundle with every cross-module derived scalar precomputed.
/// Immutable after validation; share freely across concurrent solver runs.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidatedConfig {
    pub market: MarketParams,
    pub cir: CirParams,
    pub grid: GridSpec,
    /// θ = ρ²/(1−ρ²), the residual power of the reaction term.
    pub theta: f64,
    /// m = μ²/(2σ²).
    pub sharpe_term: f64,
    /// c = e^{−rT}, the discounted face value at this config's maturity.
    pub discount: f64,
    pub dy: f64,
    pub dt: f64,
    /// Whether 2αλ̄ > φ². Informational only.
    pub feller: bool,
}

impl ValidatedConfig {
    /// γc, the exponent of the buyer/seller source scales.
    pub fn gamma_c(&self) -> f64 {
        self.market.risk_aversion * self.discount
    }
}

fn ensure(cond: bool, field: &'static str, reason: String) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter { field, reason })
    }
}

fn finite(x: f64, field: &'static str) -> Result<()> {
    ensure(x.is_finite(), field, format!("must be finite, got {x}"))
}

/// Checks every invariant and returns the config with derived scalars.
/// The error names the first violated invariant.
pub fn validate(market: MarketParams, cir: CirParams, grid: GridSpec) -> Result<ValidatedConfig> {
    finite(market.excess_return, "excess_return")?;
    finite(market.volatility, "volatility")?;
    ensure(
        market.volatility > 0.0,
        "volatility",
        format!("must be > 0, got {}", market.volatility),
    )?;
    finite(market.risk_free_rate, "risk_free_rate")?;
    ensure(
        market.risk_free_rate >= 0.0,
        "risk_free_rate",
        format!("must be >= 0, got {}", market.risk_free_rate),
    )?;
    finite(market.correlation, "correlation")?;
    ensure(
        market.correlation.abs() < 1.0,
        "correlation",
        format!(
            "must lie strictly inside (-1, 1) so the distortion power is finite, got {}",
            market.correlation
        ),
    )?;
    finite(market.risk_aversion, "risk_aversion")?;
    ensure(
        market.risk_aversion > 0.0,
        "risk_aversion",
        format!("must be > 0, got {}", market.risk_aversion),
    )?;
    ensure(
        market.risk_aversion <= 10.0,
        "risk_aversion",
        format!("must be <= 10, got {}", market.risk_aversion),
    )?;

    finite(cir.alpha, "alpha")?;
    ensure(
        cir.alpha > 0.0,
        "alpha",
        format!("must be > 0, got {}", cir.alpha),
    )?;
    finite(cir.lambda_bar, "lambda_bar")?;
    ensure(
        cir.lambda_bar > 0.0,
        "lambda_bar",
        format!("must be > 0, got {}", cir.lambda_bar),
    )?;
    finite(cir.phi, "phi")?;
    ensure(
        cir.phi > 0.0,
        "phi",
        format!("must be > 0, got {}", cir.phi),
    )?;

    finite(grid.y_max, "y_max")?;
    ensure(
        grid.y_max > 0.0,
        "y_max",
        format!("must be > 0, got {}", grid.y_max),
    )?;
    ensure(
        grid.n_interior >= 3,
        "n_interior",
        format!("must be >= 3, got {}", grid.n_interior),
    )?;
    finite(grid.maturity, "maturity")?;
    ensure(
        grid.maturity > 0.0,
        "maturity",
        format!("must be > 0, got {}", grid.maturity),
    )?;

    let theta = market.distortion_theta();
    let sharpe_term = market.sharpe_term();
    let discount = (-market.risk_free_rate * grid.maturity).exp();

    Ok(ValidatedConfig {
        market,
        cir,
        grid,
        theta,
        sharpe_term,
        discount,
        dy: grid.dy(),
        dt: grid.dt(),
        feller: cir.feller(),
    })
}

/// Paper-style defaults used across tests and the CLI: μ=0.09, σ=0.15,
/// r=0.03, ρ=−0.10, γ=0.01 and the CIR estimates α=0.20, λ̄=0.06, φ=0.03.
pub mod defaults {
    use super::{CirParams, MarketParams};

    pub fn market() -> MarketParams {
        MarketParams {
            excess_return: 0.09,
            volatility: 0.15,
            risk_free_rate: 0.03,
            correlation: -0.10,
            risk_aversion: 0.01,
        }
    }

    pub fn cir() -> CirParams {
        CirParams {
            alpha: 0.20,
            lambda_bar: 0.06,
            phi: 0.03,
        }
    }
}
