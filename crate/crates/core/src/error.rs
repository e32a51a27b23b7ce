use thiserror::Error;

use crate::optimizer::OptimizationResult;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("spheres {first} and {second} overlap: centre distance {distance:.6e} < {minimum:.6e}")]
    Overlap {
        first: usize,
        second: usize,
        distance: f64,
        minimum: f64,
    },

    #[error("spheres collide at t = {time:.6e}: centre distance {distance:.6e} < {minimum:.6e}")]
    Collision { time: f64, distance: f64, minimum: f64 },

    #[error("shape component {index} = {value:.6e} lies outside [{lower:.6e}, {upper:.6e}]")]
    OutOfBounds {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("stokeslet evaluated at coincident points")]
    SingularPoint,

    #[error("collocation matrix is numerically singular (pivot ratio {pivot_ratio:.3e})")]
    Factorization { pivot_ratio: f64 },

    #[error("resistance matrix is singular (condition estimate {condition:.3e})")]
    SingularResistance { condition: f64 },

    #[error("dissipated power is negative ({power:.6e})")]
    NegativePower { power: f64 },

    #[error("rigid-mode residual {residual:.3e} exceeds tolerance {tolerance:.3e}")]
    Residual { residual: f64, tolerance: f64 },

    #[error("endpoint mask leaves every position component free; nothing to optimize")]
    InfeasibleMask,

    #[error("no feasible point exists for the given bounds and endpoint constraints: {0}")]
    Infeasible(String),

    #[error("optimizer stopped after {} iterations without converging", .0.iterations)]
    MaxIterations(Box<OptimizationResult>),

    #[error("the trust region collapsed before a feasible point was reached")]
    LineSearch,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// True for errors that come from an unphysical configuration rather than from the numerics.
    pub fn is_physical(&self) -> bool {
        matches!(
            self,
            Error::Overlap { .. }
                | Error::Collision { .. }
                | Error::OutOfBounds { .. }
                | Error::Infeasible(_)
                | Error::InfeasibleMask
        )
    }
}
