//! Lie brackets of the control fields and the rank test for local controllability.

use nalgebra::{DMatrix, DVector, UnitQuaternion, Vector3};
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{self, ShapeFields, ShapePath};
use crate::error::{Error, Result};
use crate::geometry::{Position, State, SwimmerKind};

/// Relative finite-difference step, scaled by the mean arm length.
pub const BRACKET_STEP: f64 = 1e-4;

/// Rank threshold relative to the largest column norm.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// A finite family of vector fields on a manifold, expressed in local chart coordinates.
pub trait VectorFields: Sync {
    type Point: Clone + Send + Sync;

    fn count(&self) -> usize;

    fn tangent_dim(&self) -> usize;

    /// All fields at `x`, each of length `tangent_dim`.
    fn fields(&self, x: &Self::Point) -> Result<Vec<DVector<f64>>>;

    /// The point reached from `x` by moving `s` along the tangent direction `v`.
    fn displace(&self, x: &Self::Point, v: &DVector<f64>, s: f64) -> Result<Self::Point>;

    /// Chart term added to the difference of directional derivatives; zero for flat charts.
    fn bracket_correction(&self, _f: &DVector<f64>, _g: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(self.tangent_dim())
    }
}

/// Fields on `R^n` given by a closure `(x, i) -> F_i(x)`.
pub struct EuclideanFields<F> {
    pub dim: usize,
    pub count: usize,
    pub field: F,
}

impl<F> VectorFields for EuclideanFields<F>
where
    F: Fn(&DVector<f64>, usize) -> DVector<f64> + Sync,
{
    type Point = DVector<f64>;

    fn count(&self) -> usize {
        self.count
    }

    fn tangent_dim(&self) -> usize {
        self.dim
    }

    fn fields(&self, x: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        Ok((0..self.count).map(|i| (self.field)(x, i)).collect())
    }

    fn displace(&self, x: &DVector<f64>, v: &DVector<f64>, s: f64) -> Result<DVector<f64>> {
        Ok(x + v * s)
    }
}

/// The swimmer's control fields `F_i = (e_i; W e_i)`.
///
/// Rotations in space are charted by `R = exp(η) R₀` around the base point, so the angular
/// slots hold angular velocities.
pub struct SwimmerFields<'a> {
    pub source: &'a dyn ShapeFields,
}

impl<'a> SwimmerFields<'a> {
    pub fn new(source: &'a dyn ShapeFields) -> Self {
        SwimmerFields { source }
    }
}

impl VectorFields for SwimmerFields<'_> {
    type Point = State;

    fn count(&self) -> usize {
        self.source.model().shape_dim()
    }

    fn tangent_dim(&self) -> usize {
        let m = self.source.model();
        m.shape_dim() + m.position_dim()
    }

    fn fields(&self, x: &State) -> Result<Vec<DVector<f64>>> {
        let w = self.source.mobility(x)?;
        let (p, m) = w.shape();
        Ok((0..m)
            .map(|i| {
                let mut f = DVector::zeros(m + p);
                f[i] = 1.0;
                f.rows_mut(m, p).copy_from(&w.column(i));
                f
            })
            .collect())
    }

    fn displace(&self, x: &State, v: &DVector<f64>, s: f64) -> Result<State> {
        let m = x.shape.len();
        let shape = &x.shape + v.rows(0, m) * s;
        let position = match &x.position {
            Position::Spatial { c, rotation } => Position::Spatial {
                c: c + Vector3::new(v[m], v[m + 1], v[m + 2]) * s,
                rotation: UnitQuaternion::from_scaled_axis(Vector3::new(v[m + 3], v[m + 4], v[m + 5]) * s) * rotation,
            },
            other => {
                let p = other.chart() + v.rows(m, v.len() - m) * s;
                Position::from_chart(other.kind(), p.as_slice())?
            }
        };
        Ok(State::new(shape, position))
    }

    fn bracket_correction(&self, f: &DVector<f64>, g: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(f.len());
        if self.source.model().kind == SwimmerKind::FourSphereSpace {
            let m = self.source.model().shape_dim();
            let wf = Vector3::new(f[m + 3], f[m + 4], f[m + 5]);
            let wg = Vector3::new(g[m + 3], g[m + 4], g[m + 5]);
            let c = -wf.cross(&wg);
            out.rows_mut(m + 3, 3).copy_from(&c);
        }
        out
    }
}

/// Derivatives of every field along field `i` (columns), central differences with one
/// Richardson extrapolation from steps `h` and `h/2`.
fn derivatives_along<V: VectorFields>(family: &V, x: &V::Point, base: &[DVector<f64>], i: usize, h: f64) -> Result<DMatrix<f64>> {
    let probes: Vec<f64> = vec![h, -h, 0.5 * h, -0.5 * h];
    let values: Vec<Vec<DVector<f64>>> = probes
        .par_iter()
        .map(|&s| family.fields(&family.displace(x, &base[i], s)?))
        .collect::<Result<_>>()?;
    let n = family.count();
    let mut out = DMatrix::zeros(family.tangent_dim(), n);
    for j in 0..n {
        let coarse = (&values[0][j] - &values[1][j]) / (2.0 * h);
        let fine = (&values[2][j] - &values[3][j]) / h;
        out.set_column(j, &((fine * 4.0 - coarse) / 3.0));
    }
    Ok(out)
}

/// `[F_i, F_j](x) = (F_i·∇)F_j − (F_j·∇)F_i` in chart coordinates.
pub fn lie_bracket<V: VectorFields>(family: &V, x: &V::Point, i: usize, j: usize, h: f64) -> Result<DVector<f64>> {
    let n = family.count();
    if i >= n || j >= n {
        return Err(Error::invalid(format!("field index out of range ({i}, {j}) for {n} fields")));
    }
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    if i == j {
        return Ok(DVector::zeros(family.tangent_dim()));
    }
    if i > j {
        return Ok(-lie_bracket(family, x, j, i, h)?);
    }
    let base = family.fields(x)?;
    let di = derivatives_along(family, x, &base, i, h)?;
    let dj = derivatives_along(family, x, &base, j, h)?;
    Ok(di.column(j) - dj.column(i) + family.bracket_correction(&base[i], &base[j]))
}

#[derive(Clone, Debug, Serialize)]
pub struct BracketReport {
    pub kind: SwimmerKind,
    pub state: State,
    /// `F_1 … F_M` followed by `[F_i, F_j]` for `i < j`.
    pub labels: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    pub determinant: f64,
    pub singular_values: Vec<f64>,
    pub min_singular_value: f64,
    pub threshold: f64,
    pub step: f64,
    pub passed: bool,
    pub scope: String,
}

impl BracketReport {
    pub fn matrix(&self) -> DMatrix<f64> {
        let cols: Vec<DVector<f64>> = self.columns.iter().map(|c| DVector::from_column_slice(c)).collect();
        DMatrix::from_columns(&cols)
    }

    pub fn bracket(&self, i: usize, j: usize) -> Option<DVector<f64>> {
        let label = format!("[F{},F{}]", i + 1, j + 1);
        self.labels
            .iter()
            .position(|l| *l == label)
            .map(|k| DVector::from_column_slice(&self.columns[k]))
    }
}

/// Default step for a state: `BRACKET_STEP` times the mean arm length.
pub fn default_step(s: &State) -> f64 {
    BRACKET_STEP * s.shape.mean()
}

/// Evaluates the fields and all first brackets at `s` and tests their rank.
pub fn chow_certificate(source: &dyn ShapeFields, s: &State, h: Option<f64>) -> Result<BracketReport> {
    let family = SwimmerFields::new(source);
    let h = h.unwrap_or_else(|| default_step(s));
    if !(h > 0.0) {
        return Err(Error::invalid(format!("finite-difference step must be positive, got {h}")));
    }
    let m = family.count();
    let base = family.fields(s)?;
    let derivs: Vec<DMatrix<f64>> = (0..m)
        .map(|i| derivatives_along(&family, s, &base, i, h))
        .collect::<Result<_>>()?;
    let mut labels: Vec<String> = (1..=m).map(|i| format!("F{i}")).collect();
    let mut columns: Vec<DVector<f64>> = base.clone();
    for i in 0..m {
        for j in i + 1..m {
            labels.push(format!("[F{},F{}]", i + 1, j + 1));
            columns.push(derivs[i].column(j) - derivs[j].column(i) + family.bracket_correction(&base[i], &base[j]));
        }
    }
    let mat = DMatrix::from_columns(&columns);
    let determinant = if mat.is_square() { mat.determinant() } else { f64::NAN };
    let mut singular_values: Vec<f64> = mat.clone().svd(false, false).singular_values.iter().copied().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let min_singular_value = *singular_values.last().unwrap_or(&0.0);
    let largest_column = columns.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let threshold = RANK_TOLERANCE * largest_column;
    Ok(BracketReport {
        kind: source.model().kind,
        state: s.clone(),
        labels,
        columns: columns.iter().map(|c| c.iter().copied().collect()).collect(),
        determinant,
        singular_values,
        min_singular_value,
        threshold,
        step: h,
        passed: mat.is_square() && min_singular_value > threshold,
        scope: "local rank condition at this state only; global controllability relies on analyticity and is not certified numerically".into(),
    })
}

/// Straight shape path at unit speed along one arm.
struct Leg {
    start: DVector<f64>,
    direction: DVector<f64>,
    duration: f64,
}

impl ShapePath for Leg {
    fn duration(&self) -> f64 {
        self.duration
    }

    fn shape(&self, t: f64) -> DVector<f64> {
        &self.start + &self.direction * t
    }

    fn rate(&self, _t: f64) -> DVector<f64> {
        self.direction.clone()
    }
}

/// Follows `F_i`, `F_j`, `−F_i`, `−F_j` for time `t` each, so the end state is displaced by
/// `t² [F_i, F_j] + O(t³)`.
pub fn bracket_move(source: &dyn ShapeFields, s: &State, i: usize, j: usize, t: f64, steps_per_leg: usize) -> Result<State> {
    let m = source.model().shape_dim();
    if i >= m || j >= m {
        return Err(Error::invalid(format!("field index out of range ({i}, {j}) for {m} fields")));
    }
    let mut state = s.clone();
    for (k, sign) in [(i, 1.0), (j, 1.0), (i, -1.0), (j, -1.0)] {
        let mut direction = DVector::zeros(m);
        direction[k] = sign;
        let leg = Leg { start: state.shape.clone(), direction, duration: t };
        state = dynamics::integrate(source, &state, &leg, steps_per_leg)?.final_state().clone();
    }
    Ok(state)
}

/// Chart coordinates of `to` around `from`, matching the bracket coordinates.
pub fn chart_difference(from: &State, to: &State) -> DVector<f64> {
    let ds = &to.shape - &from.shape;
    let dp = match (&from.position, &to.position) {
        (Position::Spatial { c: c0, rotation: r0 }, Position::Spatial { c: c1, rotation: r1 }) => {
            let eta = (r1 * r0.inverse()).scaled_axis();
            let dc = c1 - c0;
            DVector::from_vec(vec![dc.x, dc.y, dc.z, eta.x, eta.y, eta.z])
        }
        (a, b) => b.chart() - a.chart(),
    };
    let mut out = DVector::zeros(ds.len() + dp.len());
    out.rows_mut(0, ds.len()).copy_from(&ds);
    out.rows_mut(ds.len(), dp.len()).copy_from(&dp);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::FarFieldShapeFields;
    use crate::geometry::SwimmerModel;
    use approx::assert_relative_eq;

    #[test]
    fn constant_fields_commute() {
        let fam = EuclideanFields {
            dim: 3,
            count: 2,
            field: |_: &DVector<f64>, i: usize| if i == 0 { DVector::from_vec(vec![1.0, 2.0, 0.0]) } else { DVector::from_vec(vec![0.0, -1.0, 3.0]) },
        };
        let b = lie_bracket(&fam, &DVector::from_vec(vec![0.3, 0.1, -2.0]), 0, 1, 1e-3).unwrap();
        assert!(b.norm() < 1e-12);
    }

    #[test]
    fn shear_pair_bracket() {
        let fam = EuclideanFields {
            dim: 2,
            count: 2,
            field: |x: &DVector<f64>, i: usize| if i == 0 { DVector::from_vec(vec![1.0, 0.0]) } else { DVector::from_vec(vec![0.0, x[0]]) },
        };
        let x = DVector::from_vec(vec![0.7, -0.4]);
        let b = lie_bracket(&fam, &x, 0, 1, 1e-3).unwrap();
        assert_relative_eq!(b, DVector::from_vec(vec![0.0, 1.0]), epsilon = 1e-10);
        assert_eq!(lie_bracket(&fam, &x, 1, 0, 1e-3).unwrap(), -b);
        assert_eq!(lie_bracket(&fam, &x, 1, 1, 1e-3).unwrap(), DVector::zeros(2));
    }

    #[test]
    fn rotation_fields_on_so3_close_up() {
        // Pure rotations about fixed lab axes: the bracket of e_x and e_y rotations is -e_z in
        // the left chart, independent of the base point.
        let model = SwimmerModel::new(SwimmerKind::FourSphereSpace, 0.05);
        let ff = FarFieldShapeFields::new(model, 1.0);
        let fam = SwimmerFields::new(&ff);
        let mut f = DVector::zeros(10);
        f[7] = 1.0;
        let mut g = DVector::zeros(10);
        g[8] = 1.0;
        let c = fam.bracket_correction(&f, &g);
        assert_eq!(c[9], -1.0);
    }

    #[test]
    fn far_field_certificates_pass() {
        for (kind, shape) in [
            (SwimmerKind::ThreeSphereLine, vec![1.0, 1.0]),
            (SwimmerKind::ThreeSpherePlane, vec![1.0; 3]),
            (SwimmerKind::FourSphereSpace, vec![1.0; 4]),
        ] {
            let model = SwimmerModel::new(kind, 0.05);
            let ff = FarFieldShapeFields::new(model.clone(), 1.0);
            let r = chow_certificate(&ff, &State::at_origin(&model, &shape), None).unwrap();
            assert!(r.passed, "{kind:?}: {:?}", r.singular_values);
            assert_eq!(r.columns.len(), kind.shape_dim() + kind.position_dim());
        }
    }

    #[test]
    fn commutator_flow_matches_bracket_in_far_field() {
        let model = SwimmerModel::new(SwimmerKind::FourSphereSpace, 0.05);
        let ff = FarFieldShapeFields::new(model.clone(), 1.0);
        let s = State::at_origin(&model, &[0.5, 0.6, 0.55, 0.45]);
        let b = lie_bracket(&SwimmerFields::new(&ff), &s, 0, 2, default_step(&s)).unwrap();
        let t = 0.005;
        let end = bracket_move(&ff, &s, 0, 2, t, 20).unwrap();
        let d = chart_difference(&s, &end) / (t * t);
        assert_relative_eq!(d, b, max_relative = 0.05, epsilon = 0.05 * b.norm());
        let same = bracket_move(&ff, &s, 1, 1, t, 20).unwrap();
        assert!(chart_difference(&s, &same).norm() < 1e-12);
    }
}
