use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::problem::OptimizationProblem;
use super::sqp::SolveStatus;
use super::stroke::Stroke;
use super::symmetry::{mirror, rotate};
use super::{solve, OptimizationResult};
use crate::dynamics::ShapeFields;
use crate::error::{Error, Result};
use crate::geometry::SwimmerKind;

/// Relative energy difference below which two optima count as the same.
pub const SAME_ENERGY: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchCell {
    pub start_angle: f64,
    pub seed: usize,
    pub branch: usize,
    pub energy: Option<f64>,
    pub final_angle: Option<f64>,
    pub initial_shape: Option<Vec<f64>>,
    pub status: Option<SolveStatus>,
    pub error: Option<String>,
}

/// The optimum at the first angle and the optimum reached from its mirror image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MirrorPair {
    pub energy: f64,
    pub mirror_energy: f64,
    pub relative_gap: f64,
    /// Largest knot difference between the mirrored first optimum and the second, relative to
    /// the mean arm length.
    pub shape_distance: f64,
    /// Largest knot difference between the two optima themselves.
    pub separation: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchTable {
    pub angles: Vec<f64>,
    pub seeds: usize,
    pub cells: Vec<BranchCell>,
    pub branches: usize,
    /// Spread of the lowest energy over the start angles, relative to its minimum.
    pub envelope_spread: f64,
    /// Spread over every converged cell.
    pub total_spread: f64,
    pub mirror_pair: Option<MirrorPair>,
}

fn problem_at(template: &OptimizationProblem, angle: f64) -> OptimizationProblem {
    let mut p = template.clone();
    let start = template.start[2].unwrap_or(0.0);
    p.start[2] = Some(angle);
    if let Some(end) = template.end[2] {
        p.end[2] = Some(angle + end - start);
    }
    p
}

fn permuted_shapes(stroke: &Stroke, shift: usize) -> Result<Stroke> {
    let x = stroke.shape_knots();
    let shape = DMatrix::from_fn(x.nrows(), x.ncols(), |k, i| x[(k, (i + shift) % 3)]);
    stroke.with_knots(shape, stroke.position_knots().clone())
}

/// Keeps the iterate when the cap is hit so continuation can proceed.
fn solve_cell(problem: &OptimizationProblem, fields: &dyn ShapeFields, guess: &Stroke) -> std::result::Result<OptimizationResult, (Option<OptimizationResult>, String)> {
    match solve(problem, fields, Some(guess)) {
        Ok(r) => Ok(r),
        Err(Error::MaxIterations(r)) => Err((Some(*r), "iteration limit".into())),
        Err(e) => Err((None, e.to_string())),
    }
}

/// Optimal energy against the start angle of the planar swimmer.
///
/// The template is solved at the first angle; `seeds` families are started from it with the
/// shape histories cyclically relabelled and continued across the angles, each from its own
/// previous optimum turned by the angle step. Failed cells are recorded and the scan continues.
pub fn branch_scan(
    template: &OptimizationProblem,
    fields: &dyn ShapeFields,
    angles: &[f64],
    seeds: usize,
) -> Result<BranchTable> {
    if template.model.kind != SwimmerKind::ThreeSpherePlane {
        return Err(Error::invalid("branch scans are defined for the planar three-sphere swimmer"));
    }
    if angles.is_empty() || !(1..=3).contains(&seeds) {
        return Err(Error::invalid("branch scan needs at least one angle and 1 to 3 seeds"));
    }
    template.validate()?;
    let first = problem_at(template, angles[0]);
    let base = solve(&first, fields, None)?;
    let scale = base.stroke.shape_knots().mean();

    let mirror_pair = if angles[0].abs() < 1e-12 {
        let seed = mirror(&base.stroke)?;
        match solve(&first, fields, Some(&seed)) {
            Ok(other) => {
                let reflected = mirror(&base.stroke)?;
                Some(MirrorPair {
                    energy: base.energy,
                    mirror_energy: other.energy,
                    relative_gap: (base.energy - other.energy).abs() / base.energy,
                    shape_distance: (reflected.shape_knots() - other.stroke.shape_knots()).amax() / scale,
                    separation: (base.stroke.shape_knots() - other.stroke.shape_knots()).amax() / scale,
                })
            }
            Err(e) => {
                log::warn!("mirror optimum failed: {e}");
                None
            }
        }
    } else {
        None
    };

    let families: Vec<Vec<BranchCell>> = (0..seeds)
        .into_par_iter()
        .map(|seed| {
            let mut guess = permuted_shapes(&base.stroke, seed).expect("relabelled knots are valid");
            let mut previous = angles[0];
            let mut cells = Vec::with_capacity(angles.len());
            for &angle in angles {
                let mut cell = BranchCell {
                    start_angle: angle,
                    seed,
                    branch: seed,
                    energy: None,
                    final_angle: None,
                    initial_shape: None,
                    status: None,
                    error: None,
                };
                let problem = problem_at(template, angle);
                let outcome = rotate(&guess, angle - previous)
                    .map_err(|e| (None, e.to_string()))
                    .and_then(|g| solve_cell(&problem, fields, &g));
                let result = match outcome {
                    Ok(r) => Some(r),
                    Err((r, msg)) => {
                        cell.error = Some(msg);
                        r
                    }
                };
                if let Some(r) = result {
                    cell.status = Some(r.status);
                    if cell.error.is_none() {
                        cell.energy = Some(r.energy);
                    }
                    cell.final_angle = Some(r.final_position()[2]);
                    cell.initial_shape = Some(r.initial_shape().iter().copied().collect());
                    guess = r.stroke;
                    previous = angle;
                }
                cells.push(cell);
            }
            cells
        })
        .collect();

    // Families whose energies agree wherever both converged belong to one branch.
    let mut label: Vec<usize> = (0..seeds).collect();
    for a in 0..seeds {
        for b in 0..a {
            let same = families[a].iter().zip(&families[b]).all(|(x, y)| match (x.energy, y.energy) {
                (Some(e), Some(f)) => (e - f).abs() <= SAME_ENERGY * e.abs().max(f.abs()),
                _ => true,
            });
            if same && label[b] == b {
                label[a] = label[b];
                break;
            }
        }
    }
    let mut ids: Vec<usize> = label.clone();
    ids.sort_unstable();
    ids.dedup();
    let branches = ids.len();
    let mut cells: Vec<BranchCell> = families.into_iter().flatten().collect();
    for c in &mut cells {
        c.branch = ids.iter().position(|&i| i == label[c.seed]).unwrap_or(0);
    }

    let spread = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if v.is_empty() { f64::NAN } else { (hi - lo) / lo }
    };
    let envelope: Vec<f64> = angles
        .iter()
        .filter_map(|&a| {
            cells
                .iter()
                .filter(|c| c.start_angle == a)
                .filter_map(|c| c.energy)
                .reduce(f64::min)
        })
        .collect();
    let all: Vec<f64> = cells.iter().filter_map(|c| c.energy).collect();
    Ok(BranchTable {
        angles: angles.to_vec(),
        seeds,
        envelope_spread: spread(&envelope),
        total_spread: spread(&all),
        branches,
        cells,
        mirror_pair,
    })
}
