use std::io::Write;

use nalgebra::{DVector, UnitQuaternion, Vector3};
use serde::Serialize;

use super::{ShapeFields, ShapePath, ShapeSample};
use crate::bem::{BemSystem, SurfaceField};
use crate::error::{Error, Result};
use crate::geometry::{self, Position, State, SwimmerModel};

pub const DEFAULT_STEPS: usize = 200;

#[derive(Clone, Debug, Serialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<State>,
    /// Energy dissipated during each step.
    pub step_energy: Vec<f64>,
}

impl Trajectory {
    pub fn total_energy(&self) -> f64 {
        self.step_energy.iter().sum()
    }

    pub fn cumulative_energy(&self) -> Vec<f64> {
        std::iter::once(0.0)
            .chain(self.step_energy.iter().scan(0.0, |acc, e| {
                *acc += e;
                Some(*acc)
            }))
            .collect()
    }

    pub fn final_state(&self) -> &State {
        self.states.last().expect("trajectory has at least one state")
    }

    /// Columns `t`, shape components, position chart components, cumulative energy.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let first = &self.states[0];
        let m = first.shape.len();
        let mut header = vec!["t".to_string()];
        header.extend((1..=m).map(|i| format!("xi{i}")));
        header.extend(position_labels(&first.position).iter().map(|s| s.to_string()));
        header.push("energy".into());
        writeln!(w, "{}", header.join(","))?;
        for ((t, s), e) in self.times.iter().zip(&self.states).zip(self.cumulative_energy()) {
            let mut row = vec![fmt17(*t)];
            row.extend(s.shape.iter().map(|v| fmt17(*v)));
            row.extend(s.position.chart().iter().map(|v| fmt17(*v)));
            row.push(fmt17(e));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

fn position_labels(p: &Position) -> &'static [&'static str] {
    match p {
        Position::Line { .. } => &["c"],
        Position::Planar { .. } => &["cx", "cy", "theta"],
        Position::Spatial { .. } => &["cx", "cy", "cz", "rx", "ry", "rz"],
    }
}

/// 17 significant digits.
pub fn fmt17(v: f64) -> String {
    format!("{v:.16e}")
}

fn rate(sample: &ShapeSample, position: &Position, shape_rate: &DVector<f64>) -> DVector<f64> {
    super::transport(position, &sample.mobility) * shape_rate
}

fn at_time<T>(t: f64, r: Result<T>) -> Result<T> {
    match r {
        Err(Error::Overlap { distance, minimum, .. }) => Err(Error::Collision { time: t, distance, minimum }),
        other => other,
    }
}

fn check(model: &SwimmerModel, shape: &DVector<f64>, position: &Position, t: f64) -> Result<()> {
    at_time(t, geometry::centers(model, &State::new(shape.clone(), position.clone())).map(|_| ()))
}

/// Advances the pose along `path` with fixed-step fourth-order Runge–Kutta.
///
/// Rotations in space are advanced with the Munthe-Kaas variant, composing exponentials on the
/// left and renormalising the quaternion. The energy of each step is Simpson's rule on the
/// dissipation metric.
pub fn integrate(fields: &dyn ShapeFields, start: &State, path: &dyn ShapePath, steps: usize) -> Result<Trajectory> {
    let model = fields.model();
    if steps == 0 {
        return Err(Error::invalid("at least one integration step is required"));
    }
    let shape0 = path.shape(0.0);
    let scale = shape0.amax().max(f64::MIN_POSITIVE);
    if shape0.len() != start.shape.len() || (&shape0 - &start.shape).amax() > 1e-9 * scale {
        return Err(Error::invalid("initial state shape does not match the stroke at t = 0"));
    }
    let h = path.duration() / steps as f64;
    let mut times = vec![0.0];
    let mut states = vec![State::new(shape0.clone(), start.position.clone())];
    let mut step_energy = Vec::with_capacity(steps);
    let mut position = start.position.clone();
    check(model, &shape0, &position, 0.0)?;
    let mut s0 = at_time(0.0, fields.sample(&shape0))?;
    for n in 0..steps {
        let t = n as f64 * h;
        let (tm, t1) = (t + 0.5 * h, t + h);
        let (xm, x1) = (path.shape(tm), path.shape(t1));
        let (v0, vm, v1) = (path.rate(t), path.rate(tm), path.rate(t1));
        let sm = at_time(tm, fields.sample(&xm))?;
        let s1 = at_time(t1, fields.sample(&x1))?;
        step_energy.push(h / 6.0 * (v0.dot(&(&s0.metric * &v0)) + 4.0 * vm.dot(&(&sm.metric * &vm)) + v1.dot(&(&s1.metric * &v1))));

        position = match &position {
            Position::Spatial { c, rotation } => {
                let stage = |dc: &Vector3<f64>, dtheta: &Vector3<f64>| Position::Spatial {
                    c: c + dc,
                    rotation: UnitQuaternion::from_scaled_axis(*dtheta) * rotation,
                };
                let split = |r: DVector<f64>| (Vector3::new(r[0], r[1], r[2]), Vector3::new(r[3], r[4], r[5]));
                let (c1, w1) = split(rate(&s0, &position, &v0));
                let k1 = w1;
                let p2 = stage(&(c1 * (0.5 * h)), &(k1 * (0.5 * h)));
                check(model, &xm, &p2, tm)?;
                let (c2, w2) = split(rate(&sm, &p2, &vm));
                let k2 = dexpinv(&(k1 * (0.5 * h)), &w2);
                let p3 = stage(&(c2 * (0.5 * h)), &(k2 * (0.5 * h)));
                check(model, &xm, &p3, tm)?;
                let (c3, w3) = split(rate(&sm, &p3, &vm));
                let k3 = dexpinv(&(k2 * (0.5 * h)), &w3);
                let p4 = stage(&(c3 * h), &(k3 * h));
                check(model, &x1, &p4, t1)?;
                let (c4, w4) = split(rate(&s1, &p4, &v1));
                let k4 = dexpinv(&(k3 * h), &w4);
                let dc = (c1 + c2 * 2.0 + c3 * 2.0 + c4) * (h / 6.0);
                let dtheta = (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0);
                let q = UnitQuaternion::from_scaled_axis(dtheta) * rotation;
                Position::Spatial { c: c + dc, rotation: UnitQuaternion::new_normalize(q.into_inner()) }
            }
            _ => {
                let kind = model.kind;
                let p0 = position.chart();
                let at = |dp: &DVector<f64>| Position::from_chart(kind, (&p0 + dp).as_slice());
                let k1 = rate(&s0, &position, &v0);
                let q2 = at(&(&k1 * (0.5 * h)))?;
                check(model, &xm, &q2, tm)?;
                let k2 = rate(&sm, &q2, &vm);
                let q3 = at(&(&k2 * (0.5 * h)))?;
                check(model, &xm, &q3, tm)?;
                let k3 = rate(&sm, &q3, &vm);
                let q4 = at(&(&k3 * h))?;
                check(model, &x1, &q4, t1)?;
                let k4 = rate(&s1, &q4, &v1);
                at(&((k1 + k2 * 2.0 + k3 * 2.0 + k4) * (h / 6.0)))?
            }
        };
        check(model, &x1, &position, t1)?;
        times.push(t1);
        states.push(State::new(x1, position.clone()));
        s0 = s1;
    }
    Ok(Trajectory { times, states, step_energy })
}

/// Inverse differential of the exponential map on rotations, truncated after the
/// second-order term.
fn dexpinv(theta: &Vector3<f64>, w: &Vector3<f64>) -> Vector3<f64> {
    w - theta.cross(w) * 0.5 + theta.cross(&theta.cross(w)) / 12.0
}

/// Dissipated power computed directly from the boundary velocity of the swimmer moving with
/// shape rate `shape_rate` and position rate `position_rate`.
pub fn boundary_power(
    model: &SwimmerModel,
    s: &State,
    shape_rate: &DVector<f64>,
    position_rate: &DVector<f64>,
    points_per_sphere: usize,
    viscosity: f64,
) -> Result<f64> {
    let cfg = geometry::centers(model, s)?;
    let bem = BemSystem::new(&cfg, model.radius, points_per_sphere, viscosity)?;
    let grid = bem.grid();
    let u = SurfaceField::velocity(
        (0..grid.len())
            .map(|i| geometry::boundary_velocity(model, s, shape_rate, position_rate, grid.sphere_of(i), &grid.offsets[i]))
            .collect(),
    );
    bem.dissipated_power(&u)
}
