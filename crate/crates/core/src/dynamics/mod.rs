//! Self-propulsion: position rates induced by shape rates under zero total force and torque,
//! and integration of the resulting driftless system.

mod fields;
mod integrate;
mod path;

use nalgebra::{DMatrix, DVector, Vector3};

pub use fields::{
    transport, BemShapeFields, FarFieldShapeFields, ShapeFields, ShapeJet, ShapeSample, ShapeTable,
    TabulatedShapeFields,
};
pub use integrate::{boundary_power, fmt17, integrate, Trajectory, DEFAULT_STEPS};
pub use path::{ShapePath, SinusoidStroke, TimeWarp};

use crate::bem::{BemSystem, SurfaceField};
use crate::error::{Error, Result};
use crate::geometry::{self, State, SwimmerKind, SwimmerModel};

/// Rigid modes, in order: translations along x, y, z, then rotations about x, y, z through the
/// swimmer's reference point.
const RIGID_MODES: usize = 6;

/// Indices of the rigid modes the swimmer is free to use.
pub fn free_rigid_modes(kind: SwimmerKind) -> &'static [usize] {
    match kind {
        SwimmerKind::ThreeSphereLine => &[0],
        SwimmerKind::ThreeSpherePlane => &[0, 1, 5],
        SwimmerKind::FourSphereSpace => &[0, 1, 2, 3, 4, 5],
    }
}

#[derive(Clone, Debug)]
pub struct MobilityField {
    pub kind: SwimmerKind,
    pub state: State,
    /// Drag of the free rigid modes.
    pub resistance: DMatrix<f64>,
    /// Generalized force on the free rigid modes from unit shape rates.
    pub coupling: DMatrix<f64>,
    /// Position rate per unit shape rate, in velocity coordinates (translation then angular
    /// velocity).
    pub mobility: DMatrix<f64>,
    /// Dissipation metric on shape rates.
    pub metric: DMatrix<f64>,
    /// Force and torque left on the constrained rigid modes, relative to the free-mode coupling.
    pub constraint_residual: f64,
}

impl MobilityField {
    pub fn position_rate(&self, shape_rate: &DVector<f64>) -> DVector<f64> {
        &self.mobility * shape_rate
    }

    /// Control fields `F_i = (e_i; W e_i)`.
    pub fn fields(&self) -> Vec<DVector<f64>> {
        let m = self.mobility.ncols();
        let p = self.mobility.nrows();
        (0..m)
            .map(|i| {
                let mut f = DVector::zeros(m + p);
                f[i] = 1.0;
                f.rows_mut(m, p).copy_from(&self.mobility.column(i));
                f
            })
            .collect()
    }

    pub fn power(&self, shape_rate: &DVector<f64>) -> f64 {
        shape_rate.dot(&(&self.metric * shape_rate))
    }
}

fn rigid_field(bem: &BemSystem, mode: usize, origin: &Vector3<f64>) -> SurfaceField {
    let mut e = Vector3::zeros();
    e[mode % 3] = 1.0;
    if mode < 3 {
        bem.rigid_velocity(&e, &Vector3::zeros(), origin)
    } else {
        bem.rigid_velocity(&Vector3::zeros(), &e, origin)
    }
}

/// Reduces force and torque balance to the mobility of the swimmer at `s`.
pub fn mobility(model: &SwimmerModel, s: &State, bem: &BemSystem) -> Result<MobilityField> {
    let origin = s.position.center();
    let mut modes: Vec<SurfaceField> = (0..RIGID_MODES).map(|k| rigid_field(bem, k, &origin)).collect();
    let basis = geometry::shape_basis_velocities(model, s);
    for ball_velocities in &basis {
        modes.push(bem.sphere_translations(ball_velocities));
    }
    let forces = bem.solve_many(&modes)?;
    let n = modes.len();
    let mut gram = DMatrix::zeros(n, n);
    for a in 0..n {
        for b in a..n {
            let v = 0.5 * (bem.inner(&modes[a], &forces[b]) + bem.inner(&modes[b], &forces[a]));
            gram[(a, b)] = v;
            gram[(b, a)] = v;
        }
    }
    reduce(model, s, &gram)
}

/// Builds the grid on the swimmer at `s` and computes its mobility.
pub fn mobility_at(model: &SwimmerModel, s: &State, n_q: usize, viscosity: f64) -> Result<MobilityField> {
    let cfg = geometry::centers(model, s)?;
    let bem = BemSystem::new(&cfg, model.radius, n_q, viscosity)?;
    mobility(model, s, &bem)
}

fn reduce(model: &SwimmerModel, s: &State, gram: &DMatrix<f64>) -> Result<MobilityField> {
    let m = model.shape_dim();
    let free = free_rigid_modes(model.kind);
    let p = free.len();
    let shape_idx: Vec<usize> = (RIGID_MODES..RIGID_MODES + m).collect();
    let pick = |rows: &[usize], cols: &[usize]| DMatrix::from_fn(rows.len(), cols.len(), |r, c| gram[(rows[r], cols[c])]);
    let resistance = pick(free, free);
    let coupling = pick(free, &shape_idx);
    let diag = resistance.diagonal();
    let cond = diag.max() / diag.min();
    let chol = resistance
        .clone()
        .cholesky()
        .ok_or(Error::SingularResistance { condition: cond })?;
    let mobility = -chol.solve(&coupling);
    let metric = pick(&shape_idx, &shape_idx) + coupling.transpose() * &mobility;
    let metric = (&metric + metric.transpose()) * 0.5;

    let length = s.shape.mean().max(model.radius);
    let scale = coupling.abs().max().max(f64::MIN_POSITIVE);
    let mut residual = 0.0f64;
    for b in (0..RIGID_MODES).filter(|b| !free.contains(b)) {
        let row = pick(&[b], &shape_idx) + pick(&[b], free) * &mobility;
        let unit = if b < 3 { 1.0 } else { length };
        residual = residual.max(row.abs().max() / (scale * unit));
    }
    debug_assert_eq!(p, model.position_dim());
    Ok(MobilityField {
        kind: model.kind,
        state: s.clone(),
        resistance,
        coupling,
        mobility,
        metric,
        constraint_residual: residual,
    })
}
