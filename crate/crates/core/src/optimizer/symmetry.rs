//! Transformations of planar three-sphere strokes that preserve feasibility and energy.

use std::f64::consts::PI;

use nalgebra::{DMatrix, Matrix2, Vector2};

use super::stroke::Stroke;
use crate::error::{Error, Result};
use crate::geometry::SwimmerKind;

fn planar(stroke: &Stroke) -> Result<()> {
    if stroke.kind() != SwimmerKind::ThreeSpherePlane {
        return Err(Error::invalid("stroke symmetries are defined for the planar three-sphere swimmer"));
    }
    Ok(())
}

fn rotation(angle: f64) -> Matrix2<f64> {
    let (s, c) = angle.sin_cos();
    Matrix2::new(c, -s, s, c)
}

fn map_centers(position: &DMatrix<f64>, f: impl Fn(Vector2<f64>) -> Vector2<f64>) -> DMatrix<f64> {
    let mut out = position.clone();
    for k in 0..out.nrows() {
        let c = f(Vector2::new(out[(k, 0)], out[(k, 1)]));
        out[(k, 0)] = c.x;
        out[(k, 1)] = c.y;
    }
    out
}

/// Shifts the centre path by `offset`.
pub fn translate(stroke: &Stroke, offset: Vector2<f64>) -> Result<Stroke> {
    planar(stroke)?;
    let position = map_centers(stroke.position_knots(), |c| c + offset);
    stroke.with_knots(stroke.shape_knots().clone(), position)
}

/// Rotates the whole motion by `angle` about the origin.
pub fn rotate(stroke: &Stroke, angle: f64) -> Result<Stroke> {
    planar(stroke)?;
    let r = rotation(angle);
    let mut position = map_centers(stroke.position_knots(), |c| r * c);
    position.column_mut(2).add_scalar_mut(angle);
    stroke.with_knots(stroke.shape_knots().clone(), position)
}

/// Relabels the arms, `ξ'_i = ξ_{i+shift}`, keeping the body angle.
///
/// With arms ordered counter-clockwise the relabelled swimmer is the original one turned by
/// `−2π·shift/3`, so the centre path turns with it.
pub fn relabel(stroke: &Stroke, shift: usize) -> Result<Stroke> {
    planar(stroke)?;
    let x = stroke.shape_knots();
    let shape = DMatrix::from_fn(x.nrows(), 3, |k, i| x[(k, (i + shift) % 3)]);
    let r = rotation(-2.0 * PI * (shift % 3) as f64 / 3.0);
    let position = map_centers(stroke.position_knots(), |c| r * c);
    stroke.with_knots(shape, position)
}

/// Runs the stroke backwards from the origin: `ξ(T − t)`, `c(T − t) − c(T)`, `θ(T − t)`.
pub fn reverse(stroke: &Stroke) -> Result<Stroke> {
    planar(stroke)?;
    let k = stroke.knots();
    let (x, p) = (stroke.shape_knots(), stroke.position_knots());
    let shape = DMatrix::from_fn(k, 3, |j, i| x[(k - 1 - j, i)]);
    let end = Vector2::new(p[(k - 1, 0)], p[(k - 1, 1)]);
    let mut position = DMatrix::from_fn(k, 3, |j, i| p[(k - 1 - j, i)]);
    position = map_centers(&position, |c| c - end);
    stroke.with_knots(shape, position)
}

/// Reflects the motion in the x axis, which exchanges the two off-axis arms.
pub fn mirror(stroke: &Stroke) -> Result<Stroke> {
    planar(stroke)?;
    let x = stroke.shape_knots();
    let shape = DMatrix::from_fn(x.nrows(), 3, |k, i| x[(k, [0, 2, 1][i])]);
    let mut position = stroke.position_knots().clone();
    position.column_mut(1).neg_mut();
    position.column_mut(2).neg_mut();
    stroke.with_knots(shape, position)
}
