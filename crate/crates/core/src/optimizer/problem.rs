use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::SwimmerModel;

pub const DEFAULT_KNOTS: usize = 12;
pub const DEFAULT_GAUSS_POINTS: usize = 4;
/// Amplitude of the sinusoidal initial guess, in model length units.
pub const DEFAULT_GUESS_AMPLITUDE: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Infinity norm of the scaled constraint residual.
    pub feasibility: f64,
    /// Stationarity tolerance relative to `1 + |energy|`.
    pub stationarity: f64,
    /// Rounds of re-solving with extra bound samples where the dense check fails.
    pub refinement_rounds: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions { max_iterations: 400, feasibility: 1e-6, stationarity: 1e-5, refinement_rounds: 8 }
    }
}

/// Energy-optimal stroke problem: reach the prescribed end pose in one period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizationProblem {
    pub model: SwimmerModel,
    pub period: f64,
    #[serde(default = "default_knots")]
    pub knots: usize,
    #[serde(default = "default_gauss")]
    pub gauss_points: usize,
    /// Chart coordinates at `t = 0`; `null` leaves a component free.
    pub start: Vec<Option<f64>>,
    /// Chart coordinates at `t = T`; `null` leaves a component free.
    pub end: Vec<Option<f64>>,
    /// Fixed shape at `t = 0`, or `null` to optimize it.
    #[serde(default)]
    pub initial_shape: Option<Vec<f64>>,
    /// Require `ξ(0) = ξ(T)`.
    #[serde(default = "default_true")]
    pub periodic: bool,
    /// Centre of the initial guess when the initial shape is free; defaults to the middle of
    /// the bounds.
    #[serde(default)]
    pub guess_shape: Option<Vec<f64>>,
    #[serde(default = "default_amplitude")]
    pub guess_amplitude: f64,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn default_knots() -> usize {
    DEFAULT_KNOTS
}

fn default_gauss() -> usize {
    DEFAULT_GAUSS_POINTS
}

fn default_true() -> bool {
    true
}

fn default_amplitude() -> f64 {
    DEFAULT_GUESS_AMPLITUDE
}

impl OptimizationProblem {
    /// Problem with every start component and the given end components fixed, periodic shape.
    pub fn new(model: SwimmerModel, period: f64, start: Vec<f64>, end: Vec<Option<f64>>) -> Self {
        OptimizationProblem {
            model,
            period,
            knots: DEFAULT_KNOTS,
            gauss_points: DEFAULT_GAUSS_POINTS,
            start: start.into_iter().map(Some).collect(),
            end,
            initial_shape: None,
            periodic: true,
            guess_shape: None,
            guess_amplitude: DEFAULT_GUESS_AMPLITUDE,
            solver: SolverOptions::default(),
        }
    }

    pub fn with_initial_shape(mut self, shape: Option<Vec<f64>>) -> Self {
        self.initial_shape = shape;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let (m, p) = (self.model.shape_dim(), self.model.position_dim());
        if !(self.period > 0.0 && self.period.is_finite()) {
            return Err(Error::invalid(format!("period must be positive, got {}", self.period)));
        }
        if self.knots < 4 {
            return Err(Error::invalid(format!("at least 4 knots are required, got {}", self.knots)));
        }
        if !(1..=5).contains(&self.gauss_points) {
            return Err(Error::invalid(format!("gauss_points must be in 1..=5, got {}", self.gauss_points)));
        }
        if self.start.len() != p || self.end.len() != p {
            return Err(Error::invalid(format!("start and end need {p} position components")));
        }
        if self.end.iter().all(Option::is_none) {
            return Err(Error::InfeasibleMask);
        }
        for (name, shape) in [("initial_shape", &self.initial_shape), ("guess_shape", &self.guess_shape)] {
            if let Some(s) = shape {
                if s.len() != m {
                    return Err(Error::invalid(format!("{name} needs {m} components, got {}", s.len())));
                }
                for (i, &v) in s.iter().enumerate() {
                    if !(v >= self.model.shape_lower[i] && v <= self.model.shape_upper[i]) {
                        return Err(Error::OutOfBounds {
                            index: i,
                            value: v,
                            lower: self.model.shape_lower[i],
                            upper: self.model.shape_upper[i],
                        });
                    }
                }
            }
        }
        if !(self.guess_amplitude >= 0.0) {
            return Err(Error::invalid("guess_amplitude must be non-negative"));
        }
        Ok(())
    }

    /// Shape around which the initial guess oscillates.
    pub fn guess_center(&self) -> DVector<f64> {
        if let Some(s) = self.initial_shape.as_ref().or(self.guess_shape.as_ref()) {
            return DVector::from_column_slice(s);
        }
        let m = &self.model;
        DVector::from_fn(m.shape_dim(), |i, _| {
            let (l, u) = (m.shape_lower[i], m.shape_upper[i]);
            if u.is_finite() {
                0.5 * (l + u)
            } else {
                2.0 * l
            }
        })
    }

    /// Start pose with free components at zero.
    pub fn start_chart(&self) -> Vec<f64> {
        self.start.iter().map(|v| v.unwrap_or(0.0)).collect()
    }
}
