//! Pricing engine for defaultable zero-coupon bonds under exponential-utility
//! indifference valuation with a CIR (square-root diffusion) default intensity.
//!
//! The engine solves the three semilinear reaction-diffusion problems for the
//! Merton, bond-holder and bond-seller value factors on an intensity/time grid
//! with an implicit finite-difference march, converts the marched surfaces into
//! bid/ask indifference prices and yield-spread term structures, and
//! cross-checks everything against independent oracles (a constant-intensity
//! closed form, the CIR survival closed form, and Monte Carlo).
//!
//! Module map:
//! - [`params`]: validated market / intensity / grid parameters and the derived
//!   scalars shared by everything else.
//! - [`cir`]: CIR analytics (drift, volatility, exponential-affine survival
//!   factors, classical reduced-form price).
//! - [`pde`]: the implicit finite-difference march with the linearized power
//!   source term and Dirichlet boundaries.
//! - [`pricing`]: indifference prices, yield spreads, curve sweeps and the
//!   classical-limit comparison.
//! - [`oracle`]: verification engines (closed forms, Monte Carlo, convergence
//!   studies).

pub mod cir;
pub mod error;
pub mod fmt;
pub mod oracle;
pub mod params;
pub mod pde;
pub mod pricing;

pub use error::{Error, Result};
pub use params::{validate, AgentKind, CirParams, GridSpec, MarketParams, ValidatedConfig};
