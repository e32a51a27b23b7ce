//! Point-force (far-field) approximations of the sphere interactions.
//!
//! Every function here is closed form and independent of the boundary-element solver, so
//! they serve as oracles for it at large separations.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{self, BallConfiguration, State, SwimmerKind, SwimmerModel};

/// Pair interaction `(I + e⊗e)/r` for two ball centres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InteractionMatrix {
    pub matrix: Matrix3<f64>,
    pub distance: f64,
    pub direction: Vector3<f64>,
}

pub fn s_matrix(xi: &Vector3<f64>, xj: &Vector3<f64>) -> Result<InteractionMatrix> {
    let d = xi - xj;
    let r = d.norm();
    if r == 0.0 {
        return Err(Error::SingularPoint);
    }
    let e = d / r;
    Ok(InteractionMatrix {
        matrix: (Matrix3::identity() + e * e.transpose()) / r,
        distance: r,
        direction: e,
    })
}

/// Force on each ball to first order in `a/r` for ball velocities `u`.
pub fn approx_ball_forces(
    config: &BallConfiguration,
    u: &[Vector3<f64>],
    eta: f64,
    a: f64,
) -> Result<Vec<Vector3<f64>>> {
    let x = &config.centers;
    if u.len() != x.len() {
        return Err(Error::invalid(format!("{} velocities for {} balls", u.len(), x.len())));
    }
    let self_drag = 6.0 * PI * eta * a;
    let coupling = 9.0 * PI * eta * a * a / 2.0;
    (0..x.len())
        .map(|i| {
            let mut f = u[i] * self_drag;
            for j in 0..x.len() {
                if j != i {
                    f -= s_matrix(&x[i], &x[j])?.matrix * u[j] * coupling;
                }
            }
            Ok(f)
        })
        .collect()
}

pub fn approx_total_force(
    config: &BallConfiguration,
    u: &[Vector3<f64>],
    eta: f64,
    a: f64,
) -> Result<Vector3<f64>> {
    Ok(approx_ball_forces(config, u, eta, a)?.iter().sum())
}

/// Leading-order torque, without interactions.
pub fn approx_total_torque(
    config: &BallConfiguration,
    u: &[Vector3<f64>],
    eta: f64,
    a: f64,
    origin: &Vector3<f64>,
) -> Vector3<f64> {
    config
        .centers
        .iter()
        .zip(u)
        .map(|(x, v)| (x - origin).cross(v))
        .sum::<Vector3<f64>>()
        * (6.0 * PI * eta * a)
}

/// Axial force coefficients of the collinear swimmer: drag of a rigid translation and the
/// force generated by a unit rate of each arm, both truncated after the first interaction term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaCoefficients {
    pub drag: f64,
    pub arms: [f64; 2],
}

impl LambdaCoefficients {
    /// Axial speed per unit rate of each arm under force balance.
    pub fn speeds(&self) -> [f64; 2] {
        [-self.arms[0] / self.drag, -self.arms[1] / self.drag]
    }
}

/// The arm coefficients carry the sign of the force of a unit arm extension: extending the
/// first arm pushes ball 1 backwards, so its coefficient is negative.
pub fn lambda_coefficients_3s(shape: [f64; 2], eta: f64, a: f64) -> LambdaCoefficients {
    let [x1, x2] = shape;
    let s = x1 + x2;
    let k = 6.0 * PI * a * eta;
    LambdaCoefficients {
        drag: k * (3.0 - 3.0 * a * (1.0 / x1 + 1.0 / x2 + 1.0 / s)),
        arms: [
            -k * (1.0 - 1.5 * a * (1.0 / x1 + 1.0 / s)),
            k * (1.0 - 1.5 * a * (1.0 / x2 + 1.0 / s)),
        ],
    }
}

/// Leading-order bracket columns `[F_k, F_l]` for `k < l` at the symmetric shape with arm
/// length `zeta`, in the position coordinates `(c, angle)` of the model.
#[derive(Clone, Debug)]
pub struct BracketColumns {
    pub pairs: Vec<(usize, usize)>,
    pub columns: Vec<DVector<f64>>,
}

impl BracketColumns {
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_columns(&self.columns)
    }

    pub fn determinant(&self) -> f64 {
        self.matrix().determinant()
    }
}

pub fn bracket_asymptotics(kind: SwimmerKind, a: f64, zeta: f64) -> Result<BracketColumns> {
    let t = kind.arm_directions();
    let m = kind.shape_dim();
    let pairs: Vec<_> = (0..m).flat_map(|k| (k + 1..m).map(move |l| (k, l))).collect();
    let z2 = zeta * zeta;
    let columns = match kind {
        SwimmerKind::ThreeSpherePlane => pairs
            .iter()
            .map(|&(k, l)| {
                let tr = (t[l] - t[k]) * (4.0 * a / z2);
                let rot = -t[l].cross(&t[k]).z / (9.0 * z2);
                DVector::from_vec(vec![tr.x, tr.y, rot])
            })
            .collect(),
        SwimmerKind::FourSphereSpace => pairs
            .iter()
            .map(|&(k, l)| {
                let tr = (t[l] - t[k]) * (9.0 * 3f64.sqrt() * a / (64.0 * 2f64.sqrt() * z2));
                let rot = t[l].cross(&t[k]) * (3.0 / (16.0 * z2));
                DVector::from_vec(vec![tr.x, tr.y, tr.z, rot.x, rot.y, rot.z])
            })
            .collect(),
        SwimmerKind::ThreeSphereLine => {
            return Err(Error::invalid("the collinear swimmer has a single bracket; use its axial coefficients"))
        }
    };
    Ok(BracketColumns { pairs, columns })
}

/// Self-propulsion of the swimmer under the first-order point-force interaction model.
#[derive(Clone, Debug)]
pub struct FarFieldMobility {
    /// Position rate per unit shape rate, rows in the model's velocity coordinates.
    pub mobility: DMatrix<f64>,
    pub resistance: DMatrix<f64>,
    pub metric: DMatrix<f64>,
}

pub fn far_field_mobility(model: &SwimmerModel, s: &State, eta: f64) -> Result<FarFieldMobility> {
    let cfg = geometry::centers(model, s)?;
    let nb = model.ball_count();
    let c = s.position.center();
    let p = model.position_dim();
    let mut modes: Vec<Vec<Vector3<f64>>> = Vec::new();
    for k in 0..p {
        let mut rate = DVector::zeros(p);
        rate[k] = 1.0;
        let (v, w) = geometry::rigid_rates(model.kind, &rate);
        modes.push(cfg.centers.iter().map(|x| v + w.cross(&(x - c))).collect());
    }
    for i in 0..model.shape_dim() {
        modes.push((0..nb).map(|b| geometry::shape_direction(model, s, i, b)).collect());
    }
    let n = modes.len();
    let forces: Vec<_> = modes
        .iter()
        .map(|u| approx_ball_forces(&cfg, u, eta, model.radius))
        .collect::<Result<_>>()?;
    let gram = DMatrix::from_fn(n, n, |r, k| {
        modes[r].iter().zip(&forces[k]).map(|(u, f)| u.dot(f)).sum::<f64>()
    });
    let gram = (&gram + gram.transpose()) * 0.5;
    let rr = gram.view((0, 0), (p, p)).into_owned();
    let rs = gram.view((0, p), (p, n - p)).into_owned();
    let ss = gram.view((p, p), (n - p, n - p)).into_owned();
    let chol = rr
        .clone()
        .cholesky()
        .ok_or(Error::SingularResistance { condition: f64::INFINITY })?;
    let mobility = -chol.solve(&rs);
    let metric = ss + rs.transpose() * &mobility;
    Ok(FarFieldMobility { mobility, resistance: rr, metric })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const A: f64 = 0.05;

    fn line(xs: &[f64]) -> BallConfiguration {
        BallConfiguration::from_centers(xs.iter().map(|&x| Vector3::new(x, 0.0, 0.0)).collect())
    }

    #[test]
    fn s_matrix_on_axis() {
        let s = s_matrix(&Vector3::new(0.7, 0.0, 0.0), &Vector3::zeros()).unwrap();
        assert_relative_eq!(s.matrix, Matrix3::from_diagonal(&Vector3::new(2.0, 1.0, 1.0)) / 0.7, epsilon = 1e-15);
        assert!(matches!(s_matrix(&Vector3::x(), &Vector3::x()), Err(Error::SingularPoint)));
    }

    #[test]
    fn single_ball_drag() {
        let f = approx_total_force(&line(&[0.0]), &[Vector3::x()], 1.0, A).unwrap();
        assert_relative_eq!(f, Vector3::x() * 6.0 * PI * A, epsilon = 1e-15);
        let z = approx_total_force(&line(&[0.0, 1.0]), &[Vector3::zeros(); 2], 1.0, A).unwrap();
        assert_eq!(z, Vector3::zeros());
    }

    #[test]
    fn lambda_coefficients_match_total_force() {
        // Rigid translation and single-arm rates fed through the pair-force sum.
        let (x1, x2) = (0.9, 1.3);
        let cfg = line(&[-x1, 0.0, x2]);
        let lam = lambda_coefficients_3s([x1, x2], 1.0, A);
        let f0 = approx_total_force(&cfg, &[Vector3::x(); 3], 1.0, A).unwrap();
        assert_relative_eq!(f0.x, lam.drag, max_relative = 1e-14);
        let f1 = approx_total_force(&cfg, &[-Vector3::x(), Vector3::zeros(), Vector3::zeros()], 1.0, A).unwrap();
        assert_relative_eq!(f1.x, lam.arms[0], max_relative = 1e-14);
        let f2 = approx_total_force(&cfg, &[Vector3::zeros(), Vector3::zeros(), Vector3::x()], 1.0, A).unwrap();
        assert_relative_eq!(f2.x, lam.arms[1], max_relative = 1e-14);
    }

    #[test]
    fn symmetric_drag_coefficient() {
        // Hand sum over ordered pairs: 2/r per pair along the axis.
        let z = 20.0 * A;
        let expected = 6.0 * PI * A * (3.0 - 3.0 * A * (1.0 / z + 1.0 / z + 1.0 / (2.0 * z)));
        assert_relative_eq!(lambda_coefficients_3s([z, z], 1.0, A).drag, expected, max_relative = 1e-14);
    }

    #[test]
    fn arm_coefficient_cross_derivative() {
        let z = 20.0 * A;
        let h = 1e-5;
        let d = (lambda_coefficients_3s([z, z + h], 1.0, A).arms[0]
            - lambda_coefficients_3s([z, z - h], 1.0, A).arms[0])
            / (2.0 * h);
        assert_relative_eq!(d.abs(), 9.0 * PI * A * A / (4.0 * z * z), max_relative = 1e-8);
    }

    #[test]
    fn planar_spin_torque() {
        let m = SwimmerModel::new(SwimmerKind::ThreeSpherePlane, A);
        let z = 0.6;
        let cfg = geometry::centers(&m, &State::at_origin(&m, &[z; 3])).unwrap();
        let u: Vec<_> = m.arm_directions().iter().map(|t| Vector3::z().cross(&(t * z))).collect();
        let t = approx_total_torque(&cfg, &u, 1.0, A, &Vector3::zeros());
        assert_relative_eq!(t.z, 6.0 * PI * A * 3.0 * z * z, max_relative = 1e-14);
        let shift = approx_total_torque(&cfg, &[Vector3::new(0.3, -0.2, 0.0); 3], 1.0, A, &Vector3::zeros());
        assert!(shift.norm() < 1e-15);
    }

    #[test]
    fn bracket_determinant_scaling() {
        for (kind, exponent) in [(SwimmerKind::ThreeSpherePlane, -6.0), (SwimmerKind::FourSphereSpace, -12.0)] {
            let d1 = bracket_asymptotics(kind, A, 1.0).unwrap().determinant();
            let d2 = bracket_asymptotics(kind, A, 2.0).unwrap().determinant();
            assert!(d1.abs() > 0.0);
            assert_relative_eq!((d2 / d1).abs().log2(), exponent, epsilon = 1e-10);
        }
    }

    #[test]
    fn far_field_line_speed_matches_coefficients() {
        let m = SwimmerModel::new(SwimmerKind::ThreeSphereLine, A);
        let (x1, x2) = (0.7, 1.1);
        let ff = far_field_mobility(&m, &State::at_origin(&m, &[x1, x2]), 1.0).unwrap();
        let speeds = lambda_coefficients_3s([x1, x2], 1.0, A).speeds();
        assert_relative_eq!(ff.mobility[(0, 0)], speeds[0], max_relative = 1e-12);
        assert_relative_eq!(ff.mobility[(0, 1)], speeds[1], max_relative = 1e-12);
    }

    proptest! {
        #[test]
        fn lambda_symmetries(x1 in 0.2f64..2.0, x2 in 0.2f64..2.0) {
            let l = lambda_coefficients_3s([x1, x2], 1.0, A);
            let r = lambda_coefficients_3s([x2, x1], 1.0, A);
            prop_assert!((l.arms[0] + r.arms[1]).abs() < 1e-14);
            prop_assert!((l.drag - r.drag).abs() < 1e-14);
        }

        #[test]
        fn s_matrix_spectrum(v in prop::array::uniform3(-2.0f64..2.0)) {
            let x = Vector3::from(v);
            prop_assume!(x.norm() > 1e-3);
            let s = s_matrix(&x, &Vector3::zeros()).unwrap();
            let back = s_matrix(&Vector3::zeros(), &x).unwrap();
            prop_assert!((s.matrix - back.matrix).norm() < 1e-14 * s.matrix.norm());
            prop_assert!((s.matrix.trace() - 4.0 / s.distance).abs() < 1e-12 / s.distance);
            let mut ev: Vec<f64> = s.matrix.symmetric_eigenvalues().iter().copied().collect();
            ev.sort_by(f64::total_cmp);
            let r = s.distance;
            prop_assert!((ev[0] - 1.0 / r).abs() < 1e-12 / r && (ev[2] - 2.0 / r).abs() < 1e-12 / r);
        }

        #[test]
        fn total_force_is_linear(u in prop::array::uniform3(-1.0f64..1.0), w in prop::array::uniform3(-1.0f64..1.0), k in -3.0f64..3.0) {
            let cfg = line(&[0.0, 0.5, 1.3]);
            let u = [Vector3::from(u), Vector3::from(w), Vector3::new(0.1, 0.2, 0.3)];
            let scaled: Vec<_> = u.iter().map(|v| v * k).collect();
            let f = approx_total_force(&cfg, &u, 1.0, A).unwrap();
            let g = approx_total_force(&cfg, &scaled, 1.0, A).unwrap();
            prop_assert!((f * k - g).norm() < 1e-14 * (1.0 + g.norm()));
        }
    }
}
