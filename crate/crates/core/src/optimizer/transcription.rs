//! Finite-dimensional form of the stroke problem over spline knot values.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::problem::OptimizationProblem;
use super::sqp::{Evaluation, Nlp};
use super::stroke::{chart_map, chart_map_derivative, Stroke};
use crate::dynamics::ShapeFields;
use crate::error::{Error, Result};
use crate::geometry::SwimmerKind;
use crate::spline::UniformCubicSpline;

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    match n {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let x = 1.0 / 3f64.sqrt();
            (vec![-x, x], vec![1.0, 1.0])
        }
        3 => {
            let x = 0.6f64.sqrt();
            (vec![-x, 0.0, x], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        4 => {
            let r = (6.0f64 / 5.0).sqrt();
            let (a, b) = (((3.0 - 2.0 * r) / 7.0).sqrt(), ((3.0 + 2.0 * r) / 7.0).sqrt());
            let s30 = 30f64.sqrt();
            let (wa, wb) = ((18.0 + s30) / 36.0, (18.0 - s30) / 36.0);
            (vec![-b, -a, a, b], vec![wb, wa, wa, wb])
        }
        5 => {
            let r = 2.0 * (10.0f64 / 7.0).sqrt();
            let (a, b) = ((5.0 - r).sqrt() / 3.0, (5.0 + r).sqrt() / 3.0);
            let s70 = 70f64.sqrt();
            let (wa, wb) = ((322.0 + 13.0 * s70) / 900.0, (322.0 - 13.0 * s70) / 900.0);
            (vec![-b, -a, 0.0, a, b], vec![wb, wa, 128.0 / 225.0, wa, wb])
        }
        _ => panic!("Gauss-Legendre rule with {n} points is not tabulated"),
    }
}

struct QuadPoint {
    interval: usize,
    weight: f64,
    value: Vec<f64>,
    slope: Vec<f64>,
}

/// Contributions of one quadrature point.
struct PointTerms {
    power: f64,
    d_power_shape: DVector<f64>,
    d_power_rate: DVector<f64>,
    rate: DVector<f64>,
    d_rate_shape: DMatrix<f64>,
    d_rate_rate: DMatrix<f64>,
    d_rate_position: DMatrix<f64>,
}

/// Objective, dynamics constraints and linear constraints over the variables
/// `[ξ knots (knot-major), p knots (knot-major)]`.
///
/// Dynamics are imposed in integral form on each knot interval,
/// `p(t_{k+1}) − p(t_k) = ∫ B(p) V(ξ) ξ̇ dt`, with the same Gauss–Legendre rule as the
/// energy. Translational residuals are divided by a length scale so all rows are
/// dimensionless.
pub struct Transcription<'a> {
    pub problem: &'a OptimizationProblem,
    fields: &'a dyn ShapeFields,
    kind: SwimmerKind,
    spline: UniformCubicSpline,
    quad: Vec<QuadPoint>,
    length_scale: f64,
    row_scale: Vec<f64>,
    end: Vec<Option<f64>>,
    eq_matrix: DMatrix<f64>,
    eq_rhs: DVector<f64>,
    bound_times: Vec<f64>,
    ineq_matrix: DMatrix<f64>,
    ineq_rhs: DVector<f64>,
}

impl<'a> Transcription<'a> {
    pub fn new(problem: &'a OptimizationProblem, fields: &'a dyn ShapeFields, length_scale: f64) -> Result<Self> {
        problem.validate()?;
        if fields.model().kind != problem.model.kind {
            return Err(Error::invalid("field source and problem describe different swimmers"));
        }
        let kind = problem.model.kind;
        let k = problem.knots;
        let spline = UniformCubicSpline::new(0.0, problem.period, k)?;
        let (nodes, weights) = gauss_legendre(problem.gauss_points);
        let h = spline.step();
        let mut quad = Vec::new();
        for interval in 0..k - 1 {
            let mid = spline.knot(interval) + 0.5 * h;
            for (x, w) in nodes.iter().zip(&weights) {
                let t = mid + 0.5 * h * x;
                let (mut value, mut slope) = (vec![0.0; k], vec![0.0; k]);
                spline.weights_into(t, &mut value, &mut slope);
                quad.push(QuadPoint { interval, weight: 0.5 * h * w, value, slope });
            }
        }
        let row_scale = match kind {
            SwimmerKind::ThreeSphereLine => vec![length_scale],
            SwimmerKind::ThreeSpherePlane => vec![length_scale, length_scale, 1.0],
            SwimmerKind::FourSphereSpace => vec![length_scale, length_scale, length_scale, 1.0, 1.0, 1.0],
        };
        let mut bound_times: Vec<f64> = (0..k).map(|j| spline.knot(j)).collect();
        for interval in 0..k - 1 {
            let mid = spline.knot(interval) + 0.5 * h;
            bound_times.extend(nodes.iter().map(|x| mid + 0.5 * h * x));
        }
        let mut t = Transcription {
            problem,
            fields,
            kind,
            spline,
            quad,
            length_scale,
            row_scale,
            end: problem.end.clone(),
            eq_matrix: DMatrix::zeros(0, 0),
            eq_rhs: DVector::zeros(0),
            bound_times: Vec::new(),
            ineq_matrix: DMatrix::zeros(0, 0),
            ineq_rhs: DVector::zeros(0),
        };
        t.build_equalities();
        t.set_bound_times(bound_times);
        Ok(t)
    }

    pub fn dim(&self) -> usize {
        self.problem.knots * (self.kind.shape_dim() + self.kind.position_dim())
    }

    pub fn length_scale(&self) -> f64 {
        self.length_scale
    }

    fn shape_index(&self, knot: usize, i: usize) -> usize {
        knot * self.kind.shape_dim() + i
    }

    fn position_index(&self, knot: usize, j: usize) -> usize {
        self.problem.knots * self.kind.shape_dim() + knot * self.kind.position_dim() + j
    }

    fn build_equalities(&mut self) {
        let (m, k, n) = (self.kind.shape_dim(), self.problem.knots, self.dim());
        let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
        for (j, v) in self.problem.start.iter().enumerate() {
            if let Some(v) = v {
                let s = self.row_scale[j];
                rows.push((vec![(self.position_index(0, j), 1.0 / s)], v / s));
            }
        }
        for (j, v) in self.end.iter().enumerate() {
            if let Some(v) = v {
                let s = self.row_scale[j];
                rows.push((vec![(self.position_index(k - 1, j), 1.0 / s)], v / s));
            }
        }
        let l = self.length_scale;
        if let Some(x0) = &self.problem.initial_shape {
            for (i, v) in x0.iter().enumerate() {
                rows.push((vec![(self.shape_index(0, i), 1.0 / l)], v / l));
            }
        }
        if self.problem.periodic {
            for i in 0..m {
                rows.push((vec![(self.shape_index(0, i), 1.0 / l), (self.shape_index(k - 1, i), -1.0 / l)], 0.0));
            }
        }
        self.eq_matrix = DMatrix::zeros(rows.len(), n);
        self.eq_rhs = DVector::zeros(rows.len());
        for (r, (entries, rhs)) in rows.into_iter().enumerate() {
            for (c, v) in entries {
                self.eq_matrix[(r, c)] = v;
            }
            self.eq_rhs[r] = rhs;
        }
    }

    /// Replaces the end targets; the mask must match the problem's.
    pub fn set_end(&mut self, end: &[Option<f64>]) {
        debug_assert!(end.iter().zip(&self.problem.end).all(|(a, b)| a.is_some() == b.is_some()));
        self.end = end.to_vec();
        self.build_equalities();
    }

    pub fn bound_times(&self) -> &[f64] {
        &self.bound_times
    }

    /// Imposes the shape bounds at the given times (plus the knots and quadrature points
    /// already present).
    pub fn set_bound_times(&mut self, mut times: Vec<f64>) {
        times.sort_by(|a, b| a.total_cmp(b));
        times.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * self.problem.period);
        let (m, k, n) = (self.kind.shape_dim(), self.problem.knots, self.dim());
        let model = &self.problem.model;
        let l = self.length_scale;
        let mut rows: Vec<(Vec<f64>, usize, f64, f64)> = Vec::new();
        for &t in &times {
            let w = self.spline.weights(t).value;
            for i in 0..m {
                if model.shape_upper[i].is_finite() {
                    rows.push((w.iter().copied().collect(), i, 1.0, model.shape_upper[i]));
                }
                rows.push((w.iter().copied().collect(), i, -1.0, -model.shape_lower[i]));
            }
        }
        self.ineq_matrix = DMatrix::zeros(rows.len(), n);
        self.ineq_rhs = DVector::zeros(rows.len());
        for (r, (w, i, sign, rhs)) in rows.into_iter().enumerate() {
            for knot in 0..k {
                let c = self.shape_index(knot, i);
                self.ineq_matrix[(r, c)] = sign * w[knot] / l;
            }
            self.ineq_rhs[r] = rhs / l;
        }
        self.bound_times = times;
    }

    /// `(time, component, is_upper)` for each inequality row.
    pub fn bound_rows(&self) -> Vec<(f64, usize, bool)> {
        let model = &self.problem.model;
        let mut out = Vec::new();
        for &t in &self.bound_times {
            for i in 0..self.kind.shape_dim() {
                if model.shape_upper[i].is_finite() {
                    out.push((t, i, true));
                }
                out.push((t, i, false));
            }
        }
        out
    }

    pub fn stroke(&self, x: &DVector<f64>) -> Result<Stroke> {
        Stroke::from_variables(self.kind, self.problem.period, self.problem.knots, x)
    }

    fn point_terms(&self, q: &QuadPoint, x: &DVector<f64>) -> Result<PointTerms> {
        let (m, p, k) = (self.kind.shape_dim(), self.kind.position_dim(), self.problem.knots);
        let mut xi = DVector::zeros(m);
        let mut xi_dot = DVector::zeros(m);
        let mut pos = vec![0.0; p];
        for knot in 0..k {
            for i in 0..m {
                let v = x[self.shape_index(knot, i)];
                xi[i] += q.value[knot] * v;
                xi_dot[i] += q.slope[knot] * v;
            }
            for (j, pj) in pos.iter_mut().enumerate() {
                *pj += q.value[knot] * x[self.position_index(knot, j)];
            }
        }
        let jet = self.fields.jet(&xi)?;
        let g = &jet.sample.metric;
        let v = &jet.sample.mobility;
        let g_rate = g * &xi_dot;
        let power = xi_dot.dot(&g_rate);
        let d_power_shape = DVector::from_fn(m, |i, _| xi_dot.dot(&(&jet.d_metric[i] * &xi_dot)));
        let d_power_rate = g_rate * 2.0;

        let b = chart_map(self.kind, &pos);
        let u = v * &xi_dot;
        let rate = &b * &u;
        let mut d_rate_shape = DMatrix::zeros(p, m);
        for i in 0..m {
            d_rate_shape.set_column(i, &(&b * (&jet.d_mobility[i] * &xi_dot)));
        }
        let d_rate_rate = &b * v;
        let d_rate_position = chart_map_derivative(self.kind, &pos, &u);
        Ok(PointTerms { power, d_power_shape, d_power_rate, rate, d_rate_shape, d_rate_rate, d_rate_position })
    }

    pub fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation> {
        let (m, p, k, n) = (self.kind.shape_dim(), self.kind.position_dim(), self.problem.knots, self.dim());
        let terms: Vec<PointTerms> = self.quad.par_iter().map(|q| self.point_terms(q, x)).collect::<Result<_>>()?;

        let mut objective = 0.0;
        let mut gradient = DVector::zeros(n);
        let rows = (k - 1) * p;
        let mut constraints = DVector::zeros(rows);
        let mut jacobian = DMatrix::zeros(rows, n);
        for interval in 0..k - 1 {
            for j in 0..p {
                let r = interval * p + j;
                constraints[r] = x[self.position_index(interval + 1, j)] - x[self.position_index(interval, j)];
                jacobian[(r, self.position_index(interval + 1, j))] = 1.0;
                jacobian[(r, self.position_index(interval, j))] = -1.0;
            }
        }
        for (q, t) in self.quad.iter().zip(&terms) {
            let w = q.weight;
            objective += w * t.power;
            for knot in 0..k {
                let (a, s) = (q.value[knot], q.slope[knot]);
                for i in 0..m {
                    gradient[self.shape_index(knot, i)] += w * (a * t.d_power_shape[i] + s * t.d_power_rate[i]);
                }
            }
            for j in 0..p {
                let r = q.interval * p + j;
                constraints[r] -= w * t.rate[j];
                for knot in 0..k {
                    let (a, s) = (q.value[knot], q.slope[knot]);
                    for i in 0..m {
                        jacobian[(r, self.shape_index(knot, i))] -=
                            w * (a * t.d_rate_shape[(j, i)] + s * t.d_rate_rate[(j, i)]);
                    }
                    if a != 0.0 {
                        for jj in 0..p {
                            jacobian[(r, self.position_index(knot, jj))] -= w * a * t.d_rate_position[(j, jj)];
                        }
                    }
                }
            }
        }
        for interval in 0..k - 1 {
            for j in 0..p {
                let r = interval * p + j;
                let s = self.row_scale[j];
                constraints[r] /= s;
                jacobian.row_mut(r).scale_mut(1.0 / s);
            }
        }
        Ok(Evaluation { objective, gradient, constraints, jacobian })
    }
}

impl Nlp for Transcription<'_> {
    fn evaluate(&self, x: &DVector<f64>) -> Result<Evaluation> {
        Transcription::evaluate(self, x)
    }

    fn equality(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.eq_matrix, &self.eq_rhs)
    }

    fn inequality(&self) -> (&DMatrix<f64>, &DVector<f64>) {
        (&self.ineq_matrix, &self.ineq_rhs)
    }
}
