use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Natural cubic spline on uniformly spaced knots, represented through its cardinal basis:
/// the value and slope at any point are fixed linear combinations of the knot values.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "SplineDoc", into = "SplineDoc")]
pub struct UniformCubicSpline {
    start: f64,
    end: f64,
    knots: usize,
    step: f64,
    /// Maps knot values to knot second derivatives.
    curvature: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct SplineDoc {
    start: f64,
    end: f64,
    knots: usize,
}

impl TryFrom<SplineDoc> for UniformCubicSpline {
    type Error = Error;
    fn try_from(d: SplineDoc) -> Result<Self> {
        UniformCubicSpline::new(d.start, d.end, d.knots)
    }
}

impl From<UniformCubicSpline> for SplineDoc {
    fn from(s: UniformCubicSpline) -> Self {
        SplineDoc { start: s.start, end: s.end, knots: s.knots }
    }
}

/// Cardinal weights at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct SplineWeights {
    pub value: DVector<f64>,
    pub slope: DVector<f64>,
}

impl UniformCubicSpline {
    pub fn new(start: f64, end: f64, knots: usize) -> Result<Self> {
        if knots < 3 {
            return Err(Error::invalid(format!("a cubic spline needs at least 3 knots, got {knots}")));
        }
        if !(end > start) || !start.is_finite() || !end.is_finite() {
            return Err(Error::invalid(format!("invalid spline interval [{start}, {end}]")));
        }
        let step = (end - start) / (knots - 1) as f64;
        let n = knots - 2;
        let mut curvature = DMatrix::zeros(knots, knots);
        // Interior rows: (h/6) M[i-1] + (2h/3) M[i] + (h/6) M[i+1] = (y[i+1] - 2 y[i] + y[i-1]) / h.
        let mut tri = DMatrix::zeros(n, n);
        let mut rhs = DMatrix::zeros(n, knots);
        for r in 0..n {
            tri[(r, r)] = 2.0 * step / 3.0;
            if r > 0 {
                tri[(r, r - 1)] = step / 6.0;
            }
            if r + 1 < n {
                tri[(r, r + 1)] = step / 6.0;
            }
            rhs[(r, r)] = 1.0 / step;
            rhs[(r, r + 1)] = -2.0 / step;
            rhs[(r, r + 2)] = 1.0 / step;
        }
        let interior = tri.lu().solve(&rhs).ok_or_else(|| Error::invalid("singular spline system"))?;
        curvature.view_mut((1, 0), (n, knots)).copy_from(&interior);
        Ok(UniformCubicSpline { start, end, knots, step, curvature })
    }

    pub fn knots(&self) -> usize {
        self.knots
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn end(&self) -> f64 {
        self.end
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn knot(&self, i: usize) -> f64 {
        self.start + self.step * i as f64
    }

    /// Interval index and local coordinate in `[0, 1]`; points outside the range use the end
    /// intervals' cubics.
    fn locate(&self, x: f64) -> (usize, f64) {
        let u = (x - self.start) / self.step;
        let i = (u.floor().max(0.0) as usize).min(self.knots - 2);
        (i, u - i as f64)
    }

    pub fn weights(&self, x: f64) -> SplineWeights {
        let mut value = DVector::zeros(self.knots);
        let mut slope = DVector::zeros(self.knots);
        self.weights_into(x, value.as_mut_slice(), slope.as_mut_slice());
        SplineWeights { value, slope }
    }

    pub fn weights_into(&self, x: f64, value: &mut [f64], slope: &mut [f64]) {
        let (i, s) = self.locate(x);
        let h = self.step;
        let r = 1.0 - s;
        let ci = h * h / 6.0 * (r * r * r - r);
        let cj = h * h / 6.0 * (s * s * s - s);
        let di = -h / 6.0 * (3.0 * r * r - 1.0);
        let dj = h / 6.0 * (3.0 * s * s - 1.0);
        for k in 0..self.knots {
            let (mi, mj) = (self.curvature[(i, k)], self.curvature[(i + 1, k)]);
            value[k] = ci * mi + cj * mj;
            slope[k] = di * mi + dj * mj;
        }
        value[i] += r;
        value[i + 1] += s;
        slope[i] -= 1.0 / h;
        slope[i + 1] += 1.0 / h;
    }

    /// Second-derivative weights at `x`.
    pub fn curvature_weights(&self, x: f64) -> DVector<f64> {
        let (i, s) = self.locate(x);
        (self.curvature.row(i).transpose() * (1.0 - s)) + self.curvature.row(i + 1).transpose() * s
    }

    pub fn eval(&self, values: &[f64], x: f64) -> (f64, f64) {
        let w = self.weights(x);
        let v = w.value.iter().zip(values).map(|(a, b)| a * b).sum();
        let d = w.slope.iter().zip(values).map(|(a, b)| a * b).sum();
        (v, d)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn interpolates_knots_and_reproduces_lines() {
        let s = UniformCubicSpline::new(0.0, 2.0, 7).unwrap();
        let y: Vec<f64> = (0..7).map(|i| 3.0 - 0.5 * s.knot(i)).collect();
        for i in 0..7 {
            let (v, d) = s.eval(&y, s.knot(i));
            assert_relative_eq!(v, y[i], epsilon = 1e-14);
            assert_relative_eq!(d, -0.5, epsilon = 1e-12);
        }
        let (v, _) = s.eval(&y, 1.234);
        assert_relative_eq!(v, 3.0 - 0.5 * 1.234, epsilon = 1e-14);
    }

    #[test]
    fn natural_end_conditions() {
        let s = UniformCubicSpline::new(-1.0, 1.0, 9).unwrap();
        let y: Vec<f64> = (0..9).map(|i| s.knot(i).powi(3)).collect();
        for x in [-1.0, 1.0] {
            let c: f64 = s.curvature_weights(x).iter().zip(&y).map(|(a, b)| a * b).sum();
            assert!(c.abs() < 1e-12);
        }
    }

    #[test]
    fn slope_matches_finite_difference() {
        let s = UniformCubicSpline::new(0.0, 1.0, 12).unwrap();
        let y: Vec<f64> = (0..12).map(|i| (6.0 * s.knot(i)).sin()).collect();
        for &x in &[0.03, 0.31, 0.5, 0.77, 0.99] {
            let h = 1e-6;
            let fd = (s.eval(&y, x + h).0 - s.eval(&y, x - h).0) / (2.0 * h);
            assert_relative_eq!(s.eval(&y, x).1, fd, epsilon = 1e-7);
        }
    }

    #[test]
    fn fourth_order_accuracy_away_from_ends() {
        let err = |k: usize| {
            let s = UniformCubicSpline::new(0.0, 1.0, k).unwrap();
            let y: Vec<f64> = (0..k).map(|i| (2.0 * s.knot(i)).exp()).collect();
            let x = 0.5 + 0.37 / (k - 1) as f64;
            (s.eval(&y, x).0 - (2.0 * x).exp()).abs()
        };
        assert!(err(41) < err(21) / 10.0);
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(UniformCubicSpline::new(0.0, 1.0, 2).is_err());
        assert!(UniformCubicSpline::new(1.0, 1.0, 5).is_err());
    }
}
