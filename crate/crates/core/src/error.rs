//! Error type shared by the whole engine.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter failed validation. `field` names the first violated
    /// invariant.
    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: &'static str, reason: String },

    /// A marched value dropped to zero or below. The linearized power source
    /// requires strictly positive iterates.
    #[error(
        "positivity lost at time level {level}, node {node} (value {value:.6e}); \
         refine the grid (increase time steps and/or intensity nodes)"
    )]
    PositivityLoss { level: usize, node: usize, value: f64 },

    /// Zero pivot in the Thomas elimination.
    #[error("tridiagonal solve breakdown at row {row} (pivot {pivot:.3e})")]
    TridiagonalBreakdown { row: usize, pivot: f64 },

    /// Requested evaluation intensity lies outside the grid.
    #[error("intensity {value} outside the grid range [{min}, {max}]")]
    IntensityOutOfRange { value: f64, min: f64, max: f64 },

    /// Surfaces passed to a pricing routine do not share grid/maturity/agents.
    #[error("incompatible surfaces: {0}")]
    SurfaceMismatch(String),

    /// The marched surfaces violate the seller < merton <= buyer ordering.
    #[error(
        "value ordering violated at time level {level}, node {node}: \
         w_s={seller:.12e}, u={merton:.12e}, w_b={buyer:.12e}"
    )]
    OrderingViolation {
        level: usize,
        node: usize,
        seller: f64,
        merton: f64,
        buyer: f64,
    },

    #[error("price must be positive, got {0}")]
    NonpositivePrice(f64),

    /// The classical-limit comparison is only valid for zero excess return.
    #[error(
        "classical comparison requires excess return 0 (got {mu}); the small-risk-aversion \
         limit of the indifference price equals the arbitrage-free price only in that case"
    )]
    NonzeroExcessReturn { mu: f64 },

    /// The Feynman-Kac representation used by the Monte Carlo check only holds
    /// for the linear (zero-correlation) equations.
    #[error("feynman-kac check requires correlation 0 (got {rho}); the equations are linear only there")]
    NonzeroCorrelation { rho: f64 },

    /// The log-ratio price is numerically unreliable for risk aversion this
    /// close to zero; the classical comparison covers that regime.
    #[error(
        "risk aversion {gamma:.3e} is below 1e-6: the log-ratio of nearly equal surfaces is \
         catastrophically cancellative; use the classical comparison for the small-gamma limit"
    )]
    RiskAversionTooSmall { gamma: f64 },

    #[error("maturity ladder must be strictly increasing with positive entries")]
    BadMaturityLadder,

    /// A curve sweep failed at one maturity; wraps the underlying error.
    #[error("maturity {maturity}: {source}")]
    AtMaturity {
        maturity: f64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn at_maturity(self, maturity: f64) -> Error {
        Error::AtMaturity {
            maturity,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
