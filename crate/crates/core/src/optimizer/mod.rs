//! Energy-optimal strokes by direct transcription onto cubic splines and sequential quadratic
//! programming.

mod branch;
mod problem;
mod sqp;
mod stroke;
mod symmetry;
mod transcription;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use branch::{branch_scan, BranchCell, BranchTable, MirrorPair};
pub use problem::{OptimizationProblem, SolverOptions, DEFAULT_GAUSS_POINTS, DEFAULT_GUESS_AMPLITUDE, DEFAULT_KNOTS};
pub use sqp::{IterationRecord, SolveStatus, StepKind};
pub use stroke::{chart_map, chart_map_derivative, Stroke, DENSE_SAMPLES};
pub use symmetry::{mirror, relabel, reverse, rotate, translate};
pub use transcription::{gauss_legendre, Transcription};

use crate::bem::BemSystem;
use crate::dynamics::{self, integrate, ShapeFields, SinusoidStroke, ShapePath};
use crate::error::{Error, Result};
use crate::geometry::{self, Position, State, SwimmerModel};

/// Integration steps per knot interval when replaying a stroke.
const REPLAY_STEPS_PER_INTERVAL: usize = 40;

/// Dissipation metric on shape rates at one shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyMetric {
    pub shape: DVector<f64>,
    pub matrix: DMatrix<f64>,
}

impl EnergyMetric {
    pub fn power(&self, shape_rate: &DVector<f64>) -> f64 {
        shape_rate.dot(&(&self.matrix * shape_rate))
    }

    pub fn is_positive_definite(&self) -> bool {
        self.matrix.clone().cholesky().is_some()
    }

    /// Largest entry of the antisymmetric part relative to the largest entry.
    pub fn asymmetry(&self) -> f64 {
        (&self.matrix - self.matrix.transpose()).amax() / self.matrix.amax()
    }
}

/// Metric of the swimmer with shape `shape`, using a boundary-element system assembled at
/// the reference pose.
pub fn metric(model: &SwimmerModel, shape: &DVector<f64>, bem: &BemSystem) -> Result<EnergyMetric> {
    metric_at(model, &State::new(shape.clone(), model.origin()), bem)
}

/// Metric at an arbitrary pose; `bem` must be assembled on the balls of `s`.
pub fn metric_at(model: &SwimmerModel, s: &State, bem: &BemSystem) -> Result<EnergyMetric> {
    let expected = geometry::centers(model, s)?;
    let actual = &bem.config().centers;
    let scale = s.shape.amax().max(model.radius);
    if actual.len() != expected.centers.len()
        || actual.iter().zip(&expected.centers).any(|(a, b)| (a - b).norm() > 1e-12 * scale)
    {
        return Err(Error::invalid("boundary-element system was assembled for a different configuration"));
    }
    let field = dynamics::mobility(model, s, bem)?;
    Ok(EnergyMetric { shape: s.shape.clone(), matrix: field.metric })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActiveBound {
    pub time: f64,
    pub component: usize,
    pub upper: bool,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// Largest scaled constraint violation of the transcribed problem.
    pub feasibility: f64,
    /// Largest scaled dynamics residual.
    pub dynamics: f64,
    /// Lagrangian gradient norm.
    pub stationarity: f64,
    /// Largest bound excursion over the dense sample.
    pub dense_bound_violation: f64,
    /// Distance between the replayed final pose and the end constraints, per fixed component.
    pub replay_endpoint: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub status: SolveStatus,
    pub stroke: Stroke,
    /// Energy from the transcription quadrature.
    pub energy: f64,
    /// Energy accumulated while replaying the stroke through the integrator.
    pub replay_energy: f64,
    /// Final pose of the replay, in chart coordinates.
    pub replay_end: Vec<f64>,
    pub residuals: Residuals,
    pub iterations: usize,
    pub active_bounds: Vec<ActiveBound>,
    pub log: Vec<IterationRecord>,
}

impl OptimizationResult {
    pub fn initial_shape(&self) -> DVector<f64> {
        self.stroke.shape_at(0.0)
    }

    pub fn final_position(&self) -> DVector<f64> {
        self.stroke.position_at(self.stroke.period())
    }
}

/// Sinusoidal shape loop around the problem's guess centre, with the pose obtained by
/// integrating the dynamics from the start pose.
///
/// Net displacement grows with the square of the loop amplitude, so the amplitude is raised
/// from `guess_amplitude` towards the one whose displacement matches the prescribed end
/// translation, and the loop is run backwards if it swims the wrong way.
pub fn initial_guess(problem: &OptimizationProblem, fields: &dyn ShapeFields) -> Result<Stroke> {
    problem.validate()?;
    let model = &problem.model;
    let center = problem.guess_center();
    let room = (0..center.len())
        .map(|i| (center[i] - model.shape_lower[i]).min(model.shape_upper[i] - center[i]))
        .fold(f64::INFINITY, f64::min);
    let build = |amplitude: f64, backwards: bool| -> Result<Stroke> {
        let path = SinusoidStroke::phase_shifted(center.clone(), amplitude, problem.period);
        let p = model.position_dim();
        let period = problem.period;
        let shape_only = Stroke::from_paths(
            model.kind,
            period,
            problem.knots,
            |t| path.shape(if backwards { period - t } else { t }),
            |_| DVector::zeros(p),
        )?;
        pose_along(&clip(&shape_only, model)?, problem, fields)
    };
    let base = problem.guess_amplitude;
    let first = build(base, false)?;
    let dims = model.kind.translation_dim();
    let start = problem.start_chart();
    let wanted = DVector::from_fn(dims, |j, _| problem.end[j].map_or(0.0, |v| v - start[j]));
    let reached = DVector::from_fn(dims, |j, _| first.position_knots()[(problem.knots - 1, j)] - start[j]);
    if wanted.norm() == 0.0 || reached.norm() == 0.0 || base == 0.0 {
        return Ok(first);
    }
    let amplitude = (base * (wanted.norm() / reached.norm()).sqrt()).clamp(base, (0.9 * room).max(base));
    let backwards = wanted.dot(&reached) < 0.0;
    if amplitude == base && !backwards {
        return Ok(first);
    }
    build(amplitude, backwards)
}

/// Replaces the pose knots by the integrated pose along the stroke's shape history.
fn pose_along(stroke: &Stroke, problem: &OptimizationProblem, fields: &dyn ShapeFields) -> Result<Stroke> {
    let kind = problem.model.kind;
    let start = Position::from_chart(kind, &problem.start_chart())?;
    let per = 8;
    let tr = integrate(fields, &State::new(stroke.shape_at(0.0), start), stroke, per * (stroke.knots() - 1))?;
    let mut position = DMatrix::zeros(stroke.knots(), kind.position_dim());
    for k in 0..stroke.knots() {
        position.row_mut(k).copy_from(&tr.states[k * per].position.chart().transpose());
    }
    stroke.with_knots(stroke.shape_knots().clone(), position)
}

/// Mean width of the finite shape bounds, or the length scale when none is finite.
fn trust_scale(model: &SwimmerModel, length_scale: f64) -> f64 {
    let widths: Vec<f64> = (0..model.shape_dim())
        .map(|i| model.shape_upper[i] - model.shape_lower[i])
        .filter(|w| w.is_finite())
        .collect();
    if widths.is_empty() {
        length_scale
    } else {
        widths.iter().sum::<f64>() / widths.len() as f64
    }
}

fn clip(stroke: &Stroke, model: &SwimmerModel) -> Result<Stroke> {
    let mut shape = stroke.shape_knots().clone();
    for k in 0..shape.nrows() {
        for i in 0..shape.ncols() {
            shape[(k, i)] = shape[(k, i)].clamp(model.shape_lower[i], model.shape_upper[i]);
        }
    }
    stroke.with_knots(shape, stroke.position_knots().clone())
}

/// Local maxima of the bound excursion over the dense sample.
fn violating_times(stroke: &Stroke, model: &SwimmerModel, tolerance: f64) -> Vec<f64> {
    let n = DENSE_SAMPLES;
    let excess: Vec<f64> = (0..=n)
        .map(|s| {
            let x = stroke.shape_at(stroke.period() * s as f64 / n as f64);
            (0..x.len())
                .map(|i| (model.shape_lower[i] - x[i]).max(x[i] - model.shape_upper[i]))
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    (0..=n)
        .filter(|&s| {
            excess[s] > tolerance
                && (s == 0 || excess[s] >= excess[s - 1])
                && (s == n || excess[s] >= excess[s + 1])
        })
        .map(|s| stroke.period() * s as f64 / n as f64)
        .collect()
}

/// Relative stationarity accepted at intermediate continuation stages.
const CONTINUATION_STATIONARITY: f64 = 1e-3;
/// Smallest continuation step before giving up.
const MIN_CONTINUATION_STEP: f64 = 1.0 / 256.0;

/// Moves the end targets from `reached` to the problem's in adaptive stages, re-solving from
/// the previous stage each time. Leaves the problem's targets in place.
fn continuation(
    transcription: &mut Transcription,
    reached: &DVector<f64>,
    mut x: DVector<f64>,
    opts: &sqp::SqpOptions,
    iterations: &mut usize,
    log: &mut Vec<IterationRecord>,
) -> Result<DVector<f64>> {
    let target = transcription.problem.end.clone();
    let stage = sqp::SqpOptions { stationarity: CONTINUATION_STATIONARITY, ..opts.clone() };
    let (mut done, mut step): (f64, f64) = (0.0, 0.5);
    while done < 1.0 {
        let s = (done + step).min(1.0);
        let end: Vec<Option<f64>> =
            target.iter().enumerate().map(|(j, v)| v.map(|v| reached[j] + s * (v - reached[j]))).collect();
        transcription.set_end(&end);
        match sqp::solve(transcription, x.clone(), &stage) {
            Ok(out) if out.feasibility <= opts.feasibility => {
                *iterations += out.iterations;
                log.extend(out.log);
                x = out.x;
                done = s;
                step = (2.0 * step).min(1.0);
            }
            _ => {
                step *= 0.25;
                if step < MIN_CONTINUATION_STEP {
                    transcription.set_end(&target);
                    return Err(Error::LineSearch);
                }
            }
        }
    }
    transcription.set_end(&target);
    Ok(x)
}

/// Solves `problem` from `guess` (or the default sinusoidal guess).
///
/// Returns [`Error::MaxIterations`] with the last iterate when the iteration cap is hit.
pub fn solve(problem: &OptimizationProblem, fields: &dyn ShapeFields, guess: Option<&Stroke>) -> Result<OptimizationResult> {
    problem.validate()?;
    let model = &problem.model;
    let guess = match guess {
        Some(g) => {
            if g.kind() != model.kind || g.knots() != problem.knots || g.period() != problem.period {
                return Err(Error::invalid("initial guess does not match the problem's knots or period"));
            }
            clip(g, model)?
        }
        None => initial_guess(problem, fields)?,
    };
    let length_scale = guess.shape_knots().mean();
    let mut transcription = Transcription::new(problem, fields, length_scale)?;
    let opts = sqp::SqpOptions {
        max_iterations: problem.solver.max_iterations,
        initial_radius: 0.25 * trust_scale(model, length_scale),
        feasibility: problem.solver.feasibility,
        stationarity: problem.solver.stationarity,
    };
    let mut x = guess.to_variables();
    let mut total_iterations = 0;
    let mut log = Vec::new();

    let reached = guess.position_knots().row(problem.knots - 1).transpose();

    let mut outcome;
    let mut round = 0;
    loop {
        outcome = match sqp::solve(&transcription, x.clone(), &opts) {
            Ok(out) => out,
            Err(Error::LineSearch) if round == 0 => {
                // Far from feasible: approach the end pose in stages instead.
                x = continuation(&mut transcription, &reached, x, &opts, &mut total_iterations, &mut log)?;
                sqp::solve(&transcription, x.clone(), &opts)?
            }
            Err(e) => return Err(e),
        };
        total_iterations += outcome.iterations;
        log.extend(outcome.log.iter().cloned());
        x = outcome.x.clone();
        let stroke = transcription.stroke(&x)?;
        let extra = violating_times(&stroke, model, problem.solver.feasibility * length_scale);
        if extra.is_empty() || round >= problem.solver.refinement_rounds || outcome.status == SolveStatus::MaxIterations {
            break;
        }
        let mut times = transcription.bound_times().to_vec();
        times.extend(extra);
        transcription.set_bound_times(times);
        round += 1;
    }

    let stroke = transcription.stroke(&x)?;
    let bound_rows = transcription.bound_rows();
    let active_bounds = outcome
        .active
        .iter()
        .map(|&r| {
            let (time, component, upper) = bound_rows[r];
            ActiveBound { time, component, upper, value: stroke.shape_at(time)[component] }
        })
        .collect();
    let start = Position::from_chart(model.kind, stroke.position_at(0.0).as_slice())?;
    let replay = integrate(
        fields,
        &State::new(stroke.shape_at(0.0), start),
        &stroke,
        REPLAY_STEPS_PER_INTERVAL * (problem.knots - 1),
    )?;
    let replay_end = replay.final_state().position.chart();
    let replay_endpoint = problem
        .end
        .iter()
        .enumerate()
        .filter_map(|(j, v)| v.map(|v| (replay_end[j] - v).abs()))
        .fold(0.0, f64::max);
    let result = OptimizationResult {
        status: outcome.status,
        energy: outcome.evaluation.objective,
        replay_energy: replay.total_energy(),
        replay_end: replay_end.iter().copied().collect(),
        residuals: Residuals {
            feasibility: outcome.feasibility,
            dynamics: outcome.evaluation.constraints.amax(),
            stationarity: outcome.stationarity,
            dense_bound_violation: stroke.bound_violation(model, DENSE_SAMPLES).0,
            replay_endpoint,
        },
        stroke,
        iterations: total_iterations,
        active_bounds,
        log,
    };
    log::info!(
        "{} stroke: status {:?}, energy {:.6e}, {} iterations",
        model.kind.label(),
        result.status,
        result.energy,
        result.iterations
    );
    if result.status == SolveStatus::MaxIterations {
        return Err(Error::MaxIterations(Box::new(result)));
    }
    Ok(result)
}

/// Objective and largest scaled dynamics residual of a stroke under the transcription of
/// `problem`.
pub fn evaluate_stroke(problem: &OptimizationProblem, fields: &dyn ShapeFields, stroke: &Stroke) -> Result<(f64, f64)> {
    let t = Transcription::new(problem, fields, stroke.shape_knots().mean())?;
    let e = t.evaluate(&stroke.to_variables())?;
    Ok((e.objective, e.constraints.amax()))
}
