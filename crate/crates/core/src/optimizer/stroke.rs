use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dynamics::ShapePath;
use crate::error::{Error, Result};
use crate::geometry::{Position, State, SwimmerKind, SwimmerModel};
use crate::spline::UniformCubicSpline;

/// Number of samples used for the dense bound check.
pub const DENSE_SAMPLES: usize = 1000;

/// Shape and position histories as natural cubic splines on uniform knots.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "StrokeDoc", into = "StrokeDoc")]
pub struct Stroke {
    kind: SwimmerKind,
    spline: UniformCubicSpline,
    /// Knot values, one row per knot.
    shape: DMatrix<f64>,
    position: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct StrokeDoc {
    kind: SwimmerKind,
    period: f64,
    #[serde(default, skip_deserializing)]
    times: Vec<f64>,
    shape: Vec<Vec<f64>>,
    position: Vec<Vec<f64>>,
}

fn rows_to_matrix(rows: &[Vec<f64>], cols: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.iter().any(|r| r.len() != cols) {
        return Err(Error::invalid(format!("every {what} knot needs {cols} components")));
    }
    Ok(DMatrix::from_fn(rows.len(), cols, |k, j| rows[k][j]))
}

impl TryFrom<StrokeDoc> for Stroke {
    type Error = Error;
    fn try_from(d: StrokeDoc) -> Result<Self> {
        let shape = rows_to_matrix(&d.shape, d.kind.shape_dim(), "shape")?;
        let position = rows_to_matrix(&d.position, d.kind.position_dim(), "position")?;
        Stroke::new(d.kind, d.period, shape, position)
    }
}

impl From<Stroke> for StrokeDoc {
    fn from(s: Stroke) -> Self {
        let rows = |m: &DMatrix<f64>| (0..m.nrows()).map(|k| m.row(k).iter().copied().collect()).collect();
        StrokeDoc {
            kind: s.kind,
            period: s.period(),
            times: (0..s.knots()).map(|k| s.spline.knot(k)).collect(),
            shape: rows(&s.shape),
            position: rows(&s.position),
        }
    }
}

impl Stroke {
    /// `shape` is `K × M` and `position` is `K × position_dim`, both in chart coordinates.
    pub fn new(kind: SwimmerKind, period: f64, shape: DMatrix<f64>, position: DMatrix<f64>) -> Result<Self> {
        let k = shape.nrows();
        if shape.ncols() != kind.shape_dim() || position.ncols() != kind.position_dim() || position.nrows() != k {
            return Err(Error::invalid(format!(
                "stroke knot arrays must be K x {} and K x {}",
                kind.shape_dim(),
                kind.position_dim()
            )));
        }
        if shape.iter().chain(position.iter()).any(|v| !v.is_finite()) {
            return Err(Error::invalid("stroke knot values must be finite"));
        }
        let spline = UniformCubicSpline::new(0.0, period, k)?;
        Ok(Stroke { kind, spline, shape, position })
    }

    /// Samples a shape path and a position path at the knots.
    pub fn from_paths(
        kind: SwimmerKind,
        period: f64,
        knots: usize,
        shape: impl Fn(f64) -> DVector<f64>,
        position: impl Fn(f64) -> DVector<f64>,
    ) -> Result<Self> {
        let spline = UniformCubicSpline::new(0.0, period, knots)?;
        let (m, p) = (kind.shape_dim(), kind.position_dim());
        let mut xs = DMatrix::zeros(knots, m);
        let mut ps = DMatrix::zeros(knots, p);
        for k in 0..knots {
            let t = spline.knot(k);
            xs.row_mut(k).copy_from(&shape(t).transpose());
            ps.row_mut(k).copy_from(&position(t).transpose());
        }
        Stroke::new(kind, period, xs, ps)
    }

    pub fn kind(&self) -> SwimmerKind {
        self.kind
    }

    pub fn period(&self) -> f64 {
        self.spline.end()
    }

    pub fn knots(&self) -> usize {
        self.shape.nrows()
    }

    pub fn knot_time(&self, k: usize) -> f64 {
        self.spline.knot(k)
    }

    pub fn spline(&self) -> &UniformCubicSpline {
        &self.spline
    }

    pub fn shape_knots(&self) -> &DMatrix<f64> {
        &self.shape
    }

    pub fn position_knots(&self) -> &DMatrix<f64> {
        &self.position
    }

    pub fn shape_at(&self, t: f64) -> DVector<f64> {
        self.shape.transpose() * self.spline.weights(t).value
    }

    pub fn shape_rate_at(&self, t: f64) -> DVector<f64> {
        self.shape.transpose() * self.spline.weights(t).slope
    }

    pub fn position_at(&self, t: f64) -> DVector<f64> {
        self.position.transpose() * self.spline.weights(t).value
    }

    pub fn position_rate_at(&self, t: f64) -> DVector<f64> {
        self.position.transpose() * self.spline.weights(t).slope
    }

    pub fn state_at(&self, t: f64) -> Result<State> {
        Ok(State::new(self.shape_at(t), Position::from_chart(self.kind, self.position_at(t).as_slice())?))
    }

    /// Variables in optimizer order: shape knots (knot-major), then position knots.
    pub fn to_variables(&self) -> DVector<f64> {
        let (k, m, p) = (self.knots(), self.shape.ncols(), self.position.ncols());
        let mut x = DVector::zeros(k * (m + p));
        for j in 0..k {
            for i in 0..m {
                x[j * m + i] = self.shape[(j, i)];
            }
            for i in 0..p {
                x[k * m + j * p + i] = self.position[(j, i)];
            }
        }
        x
    }

    pub(crate) fn from_variables(kind: SwimmerKind, period: f64, knots: usize, x: &DVector<f64>) -> Result<Self> {
        let (m, p) = (kind.shape_dim(), kind.position_dim());
        let shape = DMatrix::from_fn(knots, m, |j, i| x[j * m + i]);
        let position = DMatrix::from_fn(knots, p, |j, i| x[knots * m + j * p + i]);
        Stroke::new(kind, period, shape, position)
    }

    pub fn with_knots(&self, shape: DMatrix<f64>, position: DMatrix<f64>) -> Result<Self> {
        Stroke::new(self.kind, self.period(), shape, position)
    }

    /// Largest excursion of the shape outside the model's bounds over `samples` equally spaced
    /// times, with the time at which it occurs.
    pub fn bound_violation(&self, model: &SwimmerModel, samples: usize) -> (f64, f64) {
        let mut worst = (0.0, 0.0);
        for n in 0..=samples {
            let t = self.period() * n as f64 / samples as f64;
            let x = self.shape_at(t);
            for i in 0..x.len() {
                let v = (model.shape_lower[i] - x[i]).max(x[i] - model.shape_upper[i]);
                if v > worst.0 {
                    worst = (v, t);
                }
            }
        }
        worst
    }
}

impl ShapePath for Stroke {
    fn duration(&self) -> f64 {
        self.period()
    }

    fn shape(&self, t: f64) -> DVector<f64> {
        self.shape_at(t)
    }

    fn rate(&self, t: f64) -> DVector<f64> {
        self.shape_rate_at(t)
    }
}

fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of the left Jacobian of the rotation exponential at `r`.
pub(crate) fn left_jacobian_inverse(r: &Vector3<f64>) -> Matrix3<f64> {
    let theta = r.norm();
    let k = skew(r);
    let coeff = if theta < 1e-4 {
        1.0 / 12.0 + theta * theta / 720.0
    } else {
        1.0 / (theta * theta) - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    Matrix3::identity() - k * 0.5 + k * k * coeff
}

/// Linear map from reference-pose velocity coordinates to chart rates at chart point `p`.
pub fn chart_map(kind: SwimmerKind, p: &[f64]) -> DMatrix<f64> {
    match kind {
        SwimmerKind::ThreeSphereLine => DMatrix::identity(1, 1),
        SwimmerKind::ThreeSpherePlane => {
            let (s, c) = p[2].sin_cos();
            let mut b = DMatrix::identity(3, 3);
            b.view_mut((0, 0), (2, 2)).copy_from(&Matrix2::new(c, -s, s, c));
            b
        }
        SwimmerKind::FourSphereSpace => {
            let r = Vector3::new(p[3], p[4], p[5]);
            let rot = nalgebra::Rotation3::new(r).into_inner();
            let mut b = DMatrix::zeros(6, 6);
            b.view_mut((0, 0), (3, 3)).copy_from(&rot);
            b.view_mut((3, 3), (3, 3)).copy_from(&(left_jacobian_inverse(&r) * rot));
            b
        }
    }
}

/// Derivative of `chart_map(p) · u` with respect to `p`.
pub fn chart_map_derivative(kind: SwimmerKind, p: &[f64], u: &DVector<f64>) -> DMatrix<f64> {
    let n = kind.position_dim();
    match kind {
        SwimmerKind::ThreeSphereLine => DMatrix::zeros(1, 1),
        SwimmerKind::ThreeSpherePlane => {
            let (s, c) = p[2].sin_cos();
            let mut d = DMatrix::zeros(3, 3);
            d[(0, 2)] = -s * u[0] - c * u[1];
            d[(1, 2)] = c * u[0] - s * u[1];
            d
        }
        SwimmerKind::FourSphereSpace => {
            let mut d = DMatrix::zeros(n, n);
            for j in 3..6 {
                let h = 1e-6 * (1.0 + p[j].abs());
                let (mut up, mut dn) = (p.to_vec(), p.to_vec());
                up[j] += h;
                dn[j] -= h;
                let col = (chart_map(kind, &up) * u - chart_map(kind, &dn) * u) / (2.0 * h);
                d.set_column(j, &col);
            }
            d
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::UnitQuaternion;

    fn sample_stroke() -> Stroke {
        Stroke::from_paths(
            SwimmerKind::ThreeSpherePlane,
            2.0,
            9,
            |t| DVector::from_vec(vec![0.4 + 0.05 * t.sin(), 0.3, 0.35 - 0.02 * t]),
            |t| DVector::from_vec(vec![0.01 * t, 0.0, 0.1 * t]),
        )
        .unwrap()
    }

    #[test]
    fn knots_are_interpolated() {
        let s = sample_stroke();
        for k in 0..s.knots() {
            let t = s.knot_time(k);
            assert_relative_eq!(s.shape_at(t), s.shape_knots().row(k).transpose(), epsilon = 1e-14);
        }
        assert_relative_eq!(s.shape_at(1.3)[2], 0.35 - 0.026, epsilon = 1e-12);
    }

    #[test]
    fn variables_roundtrip() {
        let s = sample_stroke();
        let x = s.to_variables();
        let back = Stroke::from_variables(s.kind(), s.period(), s.knots(), &x).unwrap();
        assert_eq!(back.shape_knots(), s.shape_knots());
        assert_eq!(back.position_knots(), s.position_knots());
    }

    #[test]
    fn json_roundtrip() {
        let s = sample_stroke();
        let text = serde_json::to_string(&s).unwrap();
        let back: Stroke = serde_json::from_str(&text).unwrap();
        assert_eq!(back.shape_knots(), s.shape_knots());
        assert_eq!(back.period(), 2.0);
        assert!(serde_json::from_str::<Stroke>(r#"{"kind":"3SP","period":1,"shape":[[1,2]],"position":[[0,0,0]]}"#).is_err());
    }

    #[test]
    fn dense_bound_check_finds_excursions() {
        let m = SwimmerModel::bounded(SwimmerKind::ThreeSpherePlane, 0.05, 0.1, 0.42).unwrap();
        let s = sample_stroke();
        let (v, t) = s.bound_violation(&m, DENSE_SAMPLES);
        assert_relative_eq!(v, 0.05 - 0.02, epsilon = 1e-3);
        assert!((t - std::f64::consts::FRAC_PI_2).abs() < 0.05, "{t}");
    }

    #[test]
    fn planar_chart_map_rotates_translation() {
        let b = chart_map(SwimmerKind::ThreeSpherePlane, &[0.0, 0.0, std::f64::consts::FRAC_PI_2]);
        let u = DVector::from_vec(vec![1.0, 0.0, 0.3]);
        assert_relative_eq!(b * u, DVector::from_vec(vec![0.0, 1.0, 0.3]), epsilon = 1e-15);
    }

    #[test]
    fn spatial_chart_rate_reproduces_angular_velocity() {
        // d/dt exp(r(t)) exp(r(t))^T must equal the lab angular velocity.
        let r0 = Vector3::new(0.3, -0.8, 0.5);
        let w_body = Vector3::new(0.2, 0.1, -0.4);
        let p: Vec<f64> = vec![0.0, 0.0, 0.0, r0.x, r0.y, r0.z];
        let u = DVector::from_vec(vec![0.0, 0.0, 0.0, w_body.x, w_body.y, w_body.z]);
        let rate = chart_map(SwimmerKind::FourSphereSpace, &p) * &u;
        let rdot = Vector3::new(rate[3], rate[4], rate[5]);
        let h = 1e-6;
        let rp = UnitQuaternion::from_scaled_axis(r0 + rdot * h);
        let rm = UnitQuaternion::from_scaled_axis(r0 - rdot * h);
        let w_lab = (rp * rm.inverse()).scaled_axis() / (2.0 * h);
        let expected = UnitQuaternion::from_scaled_axis(r0) * w_body;
        assert_relative_eq!(w_lab, expected, epsilon = 1e-8);
    }

    #[test]
    fn chart_map_derivative_matches_differences() {
        for (kind, p) in [
            (SwimmerKind::ThreeSpherePlane, vec![0.1, 0.2, 0.7]),
            (SwimmerKind::FourSphereSpace, vec![0.1, 0.2, 0.3, 0.4, -0.2, 0.9]),
        ] {
            let n = kind.position_dim();
            let u = DVector::from_fn(n, |i, _| 0.3 + 0.1 * i as f64);
            let d = chart_map_derivative(kind, &p, &u);
            for j in 0..n {
                let h = 1e-5;
                let (mut a, mut b) = (p.clone(), p.clone());
                a[j] += h;
                b[j] -= h;
                let fd = (chart_map(kind, &a) * &u - chart_map(kind, &b) * &u) / (2.0 * h);
                assert_relative_eq!(d.column(j).into_owned(), fd, epsilon = 1e-8);
            }
        }
    }
}
