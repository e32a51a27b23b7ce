//! Swimmer models, their configuration spaces, and boundary kinematics.
//!
//! Units are millimetres, seconds and milligrams, so water has viscosity 1.

use nalgebra::{DVector, Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RADIUS: f64 = 0.05;
pub const DEFAULT_VISCOSITY: f64 = 1.0;

/// Tolerance on the orthonormality of stored rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SwimmerKind {
    /// Three collinear balls joined by two telescopic arms.
    #[serde(rename = "3S", alias = "ThreeSphereLine")]
    ThreeSphereLine,
    /// Three balls on arms at 120 degrees, moving in a plane.
    #[serde(rename = "3SP", alias = "ThreeSpherePlane")]
    ThreeSpherePlane,
    /// Four balls on tetrahedral arms, moving in space.
    #[serde(rename = "4S", alias = "FourSphereSpace")]
    FourSphereSpace,
}

impl SwimmerKind {
    pub fn shape_dim(self) -> usize {
        match self {
            SwimmerKind::ThreeSphereLine => 2,
            SwimmerKind::ThreeSpherePlane => 3,
            SwimmerKind::FourSphereSpace => 4,
        }
    }

    pub fn position_dim(self) -> usize {
        match self {
            SwimmerKind::ThreeSphereLine => 1,
            SwimmerKind::ThreeSpherePlane => 3,
            SwimmerKind::FourSphereSpace => 6,
        }
    }

    /// Number of leading chart coordinates that are translations.
    pub fn translation_dim(self) -> usize {
        match self {
            SwimmerKind::ThreeSphereLine => 1,
            SwimmerKind::ThreeSpherePlane => 2,
            SwimmerKind::FourSphereSpace => 3,
        }
    }

    pub fn ball_count(self) -> usize {
        match self {
            SwimmerKind::ThreeSphereLine | SwimmerKind::ThreeSpherePlane => 3,
            SwimmerKind::FourSphereSpace => 4,
        }
    }

    /// Smallest admissible arm length for ball radius `a`.
    pub fn default_lower_bound(self, a: f64) -> f64 {
        match self {
            SwimmerKind::ThreeSphereLine => 2.0 * a,
            SwimmerKind::ThreeSpherePlane => 2.0 * a / 3f64.sqrt(),
            SwimmerKind::FourSphereSpace => a * 1.5f64.sqrt(),
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            SwimmerKind::ThreeSphereLine => "3S",
            SwimmerKind::ThreeSpherePlane => "3SP",
            SwimmerKind::FourSphereSpace => "4S",
        }
    }

    /// Unit arm directions in the body frame.
    pub fn arm_directions(self) -> Vec<Vector3<f64>> {
        match self {
            SwimmerKind::ThreeSphereLine => vec![Vector3::x()],
            SwimmerKind::ThreeSpherePlane => {
                let h = 3f64.sqrt() / 2.0;
                vec![
                    Vector3::new(1.0, 0.0, 0.0),
                    Vector3::new(-0.5, h, 0.0),
                    Vector3::new(-0.5, -h, 0.0),
                ]
            }
            SwimmerKind::FourSphereSpace => {
                let s = 1.0 / 3f64.sqrt();
                vec![
                    Vector3::new(s, s, s),
                    Vector3::new(s, -s, -s),
                    Vector3::new(-s, s, -s),
                    Vector3::new(-s, -s, s),
                ]
            }
        }
    }

    /// Body-frame orientation of each ball's quadrature grid.
    ///
    /// Chosen so that the symmetry group of the swimmer permutes balls together with
    /// their grids; the reference sphere lattice is invariant under a half turn about x.
    pub fn ball_frames(self) -> Vec<Matrix3<f64>> {
        match self {
            SwimmerKind::ThreeSphereLine => vec![Matrix3::identity(); 3],
            SwimmerKind::ThreeSpherePlane => (0..3)
                .map(|i| {
                    *Rotation3::from_axis_angle(
                        &Vector3::z_axis(),
                        2.0 * std::f64::consts::PI * i as f64 / 3.0,
                    )
                    .matrix()
                })
                .collect(),
            SwimmerKind::FourSphereSpace => vec![
                Matrix3::identity(),
                Matrix3::from_diagonal(&Vector3::new(1.0, -1.0, -1.0)),
                Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, -1.0)),
                Matrix3::from_diagonal(&Vector3::new(-1.0, -1.0, 1.0)),
            ],
        }
    }
}

impl std::str::FromStr for SwimmerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "3S" => Ok(SwimmerKind::ThreeSphereLine),
            "3SP" => Ok(SwimmerKind::ThreeSpherePlane),
            "4S" => Ok(SwimmerKind::FourSphereSpace),
            other => Err(Error::invalid(format!("unknown swimmer kind {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SwimmerModelDoc", into = "SwimmerModelDoc")]
pub struct SwimmerModel {
    pub kind: SwimmerKind,
    pub radius: f64,
    pub shape_lower: Vec<f64>,
    pub shape_upper: Vec<f64>,
}

/// A `null` lower bound is the non-overlap default; a `null` upper bound is unbounded.
#[derive(Serialize, Deserialize)]
struct SwimmerModelDoc {
    kind: SwimmerKind,
    radius: f64,
    bounds: Vec<[Option<f64>; 2]>,
}

impl TryFrom<SwimmerModelDoc> for SwimmerModel {
    type Error = Error;

    fn try_from(doc: SwimmerModelDoc) -> Result<Self> {
        SwimmerModel::with_bounds(
            doc.kind,
            doc.radius,
            doc.bounds.iter().map(|b| b[0].unwrap_or(doc.kind.default_lower_bound(doc.radius))).collect(),
            doc.bounds.iter().map(|b| b[1].unwrap_or(f64::INFINITY)).collect(),
        )
    }
}

impl From<SwimmerModel> for SwimmerModelDoc {
    fn from(m: SwimmerModel) -> Self {
        SwimmerModelDoc {
            kind: m.kind,
            radius: m.radius,
            bounds: m
                .shape_lower
                .iter()
                .zip(&m.shape_upper)
                .map(|(&l, &u)| [Some(l), u.is_finite().then_some(u)])
                .collect(),
        }
    }
}

impl SwimmerModel {
    /// Model with the non-overlap lower bound and no upper bound.
    pub fn new(kind: SwimmerKind, radius: f64) -> Self {
        let m = kind.shape_dim();
        SwimmerModel {
            kind,
            radius,
            shape_lower: vec![kind.default_lower_bound(radius); m],
            shape_upper: vec![f64::INFINITY; m],
        }
    }

    pub fn with_bounds(
        kind: SwimmerKind,
        radius: f64,
        shape_lower: Vec<f64>,
        shape_upper: Vec<f64>,
    ) -> Result<Self> {
        let m = kind.shape_dim();
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::invalid(format!("ball radius must be positive, got {radius}")));
        }
        if shape_lower.len() != m || shape_upper.len() != m {
            return Err(Error::invalid(format!(
                "{} needs {m} shape bounds, got {} lower and {} upper",
                kind.label(),
                shape_lower.len(),
                shape_upper.len()
            )));
        }
        for (i, (&l, &u)) in shape_lower.iter().zip(&shape_upper).enumerate() {
            if !(l < u) || l.is_nan() {
                return Err(Error::invalid(format!("shape bound {i}: lower {l} must be below upper {u}")));
            }
        }
        Ok(SwimmerModel { kind, radius, shape_lower, shape_upper })
    }

    /// Replace both bounds by the same interval for every arm.
    pub fn bounded(kind: SwimmerKind, radius: f64, lower: f64, upper: f64) -> Result<Self> {
        let m = kind.shape_dim();
        Self::with_bounds(kind, radius, vec![lower; m], vec![upper; m])
    }

    pub fn shape_dim(&self) -> usize {
        self.kind.shape_dim()
    }

    pub fn position_dim(&self) -> usize {
        self.kind.position_dim()
    }

    pub fn ball_count(&self) -> usize {
        self.kind.ball_count()
    }

    pub fn arm_directions(&self) -> Vec<Vector3<f64>> {
        self.kind.arm_directions()
    }

    /// Reference position: origin, no rotation.
    pub fn origin(&self) -> Position {
        Position::origin(self.kind)
    }

    pub fn state(&self, shape: DVector<f64>, position: Position) -> State {
        State { shape, position }
    }

    pub fn check_shape(&self, shape: &DVector<f64>) -> Result<()> {
        if shape.len() != self.shape_dim() {
            return Err(Error::invalid(format!(
                "{} shape has {} components, expected {}",
                self.kind.label(),
                shape.len(),
                self.shape_dim()
            )));
        }
        for i in 0..shape.len() {
            let (v, l, u) = (shape[i], self.shape_lower[i], self.shape_upper[i]);
            if !(v > l && v < u) {
                return Err(Error::OutOfBounds { index: i, value: v, lower: l, upper: u });
            }
        }
        Ok(())
    }
}

/// Position of the swimmer's reference point and body frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Position {
    Line { c: f64 },
    /// `theta` is kept unwrapped so the net rotation over a stroke is visible.
    Planar { c: Vector2<f64>, theta: f64 },
    Spatial { c: Vector3<f64>, rotation: UnitQuaternion<f64> },
}

impl Position {
    pub fn origin(kind: SwimmerKind) -> Self {
        match kind {
            SwimmerKind::ThreeSphereLine => Position::Line { c: 0.0 },
            SwimmerKind::ThreeSpherePlane => Position::Planar { c: Vector2::zeros(), theta: 0.0 },
            SwimmerKind::FourSphereSpace => Position::Spatial {
                c: Vector3::zeros(),
                rotation: UnitQuaternion::identity(),
            },
        }
    }

    pub fn kind(&self) -> SwimmerKind {
        match self {
            Position::Line { .. } => SwimmerKind::ThreeSphereLine,
            Position::Planar { .. } => SwimmerKind::ThreeSpherePlane,
            Position::Spatial { .. } => SwimmerKind::FourSphereSpace,
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        match self {
            Position::Line { c } => Vector3::new(*c, 0.0, 0.0),
            Position::Planar { c, .. } => Vector3::new(c.x, c.y, 0.0),
            Position::Spatial { c, .. } => *c,
        }
    }

    pub fn rotation(&self) -> Matrix3<f64> {
        match self {
            Position::Line { .. } => Matrix3::identity(),
            Position::Planar { theta, .. } => {
                *Rotation3::from_axis_angle(&Vector3::z_axis(), *theta).matrix()
            }
            Position::Spatial { rotation, .. } => *rotation.to_rotation_matrix().matrix(),
        }
    }

    /// Chart coordinates: `c` for 3S, `(cx, cy, theta)` for 3SP, `(c, rotation vector)` for 4S.
    pub fn chart(&self) -> DVector<f64> {
        match self {
            Position::Line { c } => DVector::from_vec(vec![*c]),
            Position::Planar { c, theta } => DVector::from_vec(vec![c.x, c.y, *theta]),
            Position::Spatial { c, rotation } => {
                let v = rotation.scaled_axis();
                DVector::from_vec(vec![c.x, c.y, c.z, v.x, v.y, v.z])
            }
        }
    }

    pub fn from_chart(kind: SwimmerKind, p: &[f64]) -> Result<Self> {
        if p.len() != kind.position_dim() {
            return Err(Error::invalid(format!(
                "{} position has {} components, expected {}",
                kind.label(),
                p.len(),
                kind.position_dim()
            )));
        }
        Ok(match kind {
            SwimmerKind::ThreeSphereLine => Position::Line { c: p[0] },
            SwimmerKind::ThreeSpherePlane => Position::Planar {
                c: Vector2::new(p[0], p[1]),
                theta: p[2],
            },
            SwimmerKind::FourSphereSpace => Position::Spatial {
                c: Vector3::new(p[0], p[1], p[2]),
                rotation: UnitQuaternion::from_scaled_axis(Vector3::new(p[3], p[4], p[5])),
            },
        })
    }

    /// Checks that a stored rotation is proper and orthonormal.
    pub fn check(&self) -> Result<()> {
        if let Position::Spatial { rotation, .. } = self {
            let q = rotation.as_ref();
            if (q.norm() - 1.0).abs() > ROTATION_TOLERANCE {
                return Err(Error::invalid(format!(
                    "rotation quaternion has norm {}, not a proper rotation",
                    q.norm()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub shape: DVector<f64>,
    pub position: Position,
}

impl State {
    pub fn new(shape: DVector<f64>, position: Position) -> Self {
        State { shape, position }
    }

    pub fn at_origin(model: &SwimmerModel, shape: &[f64]) -> Self {
        State { shape: DVector::from_column_slice(shape), position: model.origin() }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BallConfiguration {
    pub centers: Vec<Vector3<f64>>,
    /// Lab-frame orientation of each ball's quadrature grid.
    pub frames: Vec<Matrix3<f64>>,
    pub separation: f64,
}

impl BallConfiguration {
    /// Free-standing balls with identity grid frames.
    pub fn from_centers(centers: Vec<Vector3<f64>>) -> Self {
        let frames = vec![Matrix3::identity(); centers.len()];
        let separation = min_separation(&centers).0;
        BallConfiguration { centers, frames, separation }
    }

    pub fn check_admissible(&self, radius: f64) -> Result<()> {
        let (distance, first, second) = min_separation(&self.centers);
        if self.centers.len() > 1 && distance <= 2.0 * radius {
            return Err(Error::Overlap { first, second, distance, minimum: 2.0 * radius });
        }
        Ok(())
    }
}

fn min_separation(centers: &[Vector3<f64>]) -> (f64, usize, usize) {
    let mut best = (f64::INFINITY, 0, 0);
    for i in 0..centers.len() {
        for j in i + 1..centers.len() {
            let d = (centers[i] - centers[j]).norm();
            if d < best.0 {
                best = (d, i, j);
            }
        }
    }
    best
}

/// Position of the centre of ball `ball` relative to the swimmer reference point, in the body frame.
fn body_offset(kind: SwimmerKind, shape: &DVector<f64>, ball: usize) -> Vector3<f64> {
    match kind {
        SwimmerKind::ThreeSphereLine => match ball {
            0 => Vector3::new(-shape[0], 0.0, 0.0),
            1 => Vector3::zeros(),
            _ => Vector3::new(shape[1], 0.0, 0.0),
        },
        _ => kind.arm_directions()[ball] * shape[ball],
    }
}

/// Ball centres for a state.
pub fn centers(model: &SwimmerModel, s: &State) -> Result<BallConfiguration> {
    if s.shape.len() != model.shape_dim() || s.position.kind() != model.kind {
        return Err(Error::invalid(format!(
            "state does not match a {} swimmer",
            model.kind.label()
        )));
    }
    s.position.check()?;
    let rot = s.position.rotation();
    let c = s.position.center();
    let frames0 = model.kind.ball_frames();
    let centers: Vec<_> = (0..model.ball_count())
        .map(|i| c + rot * body_offset(model.kind, &s.shape, i))
        .collect();
    let frames = frames0.iter().map(|f| rot * f).collect();
    let separation = min_separation(&centers).0;
    let cfg = BallConfiguration { centers, frames, separation };
    cfg.check_admissible(model.radius)?;
    Ok(cfg)
}

/// Velocity in the lab frame of ball `ball`'s centre for a unit rate of shape component `i`.
pub fn shape_direction(model: &SwimmerModel, s: &State, i: usize, ball: usize) -> Vector3<f64> {
    let rot = s.position.rotation();
    match model.kind {
        SwimmerKind::ThreeSphereLine => match (i, ball) {
            (0, 0) => -Vector3::x(),
            (1, 2) => Vector3::x(),
            _ => Vector3::zeros(),
        },
        _ if i == ball => rot * model.kind.arm_directions()[i],
        _ => Vector3::zeros(),
    }
}

/// Rigid-body rate of the swimmer, in lab coordinates: translation of the reference point and
/// angular velocity.
pub fn rigid_rates(kind: SwimmerKind, p_rate: &DVector<f64>) -> (Vector3<f64>, Vector3<f64>) {
    match kind {
        SwimmerKind::ThreeSphereLine => (Vector3::new(p_rate[0], 0.0, 0.0), Vector3::zeros()),
        SwimmerKind::ThreeSpherePlane => (
            Vector3::new(p_rate[0], p_rate[1], 0.0),
            Vector3::new(0.0, 0.0, p_rate[2]),
        ),
        SwimmerKind::FourSphereSpace => (
            Vector3::new(p_rate[0], p_rate[1], p_rate[2]),
            Vector3::new(p_rate[3], p_rate[4], p_rate[5]),
        ),
    }
}

/// Boundary velocity of ball `ball` at lab-frame offset `r` from its centre (`|r| = a`).
///
/// `p_rate` holds the translation rate of the reference point followed by the angular
/// velocity (`theta` rate for 3SP, the axial vector of `dR/dt R^T` for 4S).
pub fn boundary_velocity(
    model: &SwimmerModel,
    s: &State,
    shape_rate: &DVector<f64>,
    p_rate: &DVector<f64>,
    ball: usize,
    r: &Vector3<f64>,
) -> Vector3<f64> {
    let (cdot, omega) = rigid_rates(model.kind, p_rate);
    let arm = s.position.rotation() * body_offset(model.kind, &s.shape, ball);
    let mut v = cdot + omega.cross(&(arm + r));
    for i in 0..model.shape_dim() {
        v += shape_direction(model, s, i, ball) * shape_rate[i];
    }
    v
}

/// Centre velocities `[shape index][ball]` for unit shape rates with frozen position.
pub fn shape_basis_velocities(model: &SwimmerModel, s: &State) -> Vec<Vec<Vector3<f64>>> {
    (0..model.shape_dim())
        .map(|i| (0..model.ball_count()).map(|m| shape_direction(model, s, i, m)).collect())
        .collect()
}
