//! Sources of the shape-dependent part of the control system: the mobility at the reference
//! pose and the dissipation metric, as functions of the shape alone.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Mutex;

use nalgebra::{DMatrix, DVector, Matrix2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{mobility_at, MobilityField};
use crate::error::{Error, Result};
use crate::farfield;
use crate::geometry::{Position, State, SwimmerKind, SwimmerModel};
use crate::spline::UniformCubicSpline;

/// Relative step of the central differences used for shape derivatives.
pub const SHAPE_FD_STEP: f64 = 1e-4;

const CACHE_LIMIT: usize = 200_000;

#[derive(Clone, Debug, PartialEq)]
pub struct ShapeSample {
    /// Position rate per unit shape rate at the reference pose (`position_dim × M`).
    pub mobility: DMatrix<f64>,
    pub metric: DMatrix<f64>,
}

/// A sample with its derivatives along each shape component.
#[derive(Clone, Debug)]
pub struct ShapeJet {
    pub sample: ShapeSample,
    pub d_mobility: Vec<DMatrix<f64>>,
    pub d_metric: Vec<DMatrix<f64>>,
}

pub trait ShapeFields: Send + Sync {
    fn model(&self) -> &SwimmerModel;

    fn sample(&self, shape: &DVector<f64>) -> Result<ShapeSample>;

    fn jet(&self, shape: &DVector<f64>) -> Result<ShapeJet> {
        finite_difference_jet(self, shape)
    }

    /// Mobility at an arbitrary pose.
    fn mobility(&self, s: &State) -> Result<DMatrix<f64>> {
        Ok(transport(&s.position, &self.sample(&s.shape)?.mobility))
    }
}

/// Rotates reference-pose mobility rows into the frame of `position`.
pub fn transport(position: &Position, body: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = body.clone();
    match position {
        Position::Line { .. } => {}
        Position::Planar { theta, .. } => {
            let (s, c) = theta.sin_cos();
            let r = Matrix2::new(c, -s, s, c);
            let rows = r * body.rows(0, 2);
            out.rows_mut(0, 2).copy_from(&rows);
        }
        Position::Spatial { .. } => {
            let r = position.rotation();
            let t = r * body.rows(0, 3);
            let w = r * body.rows(3, 3);
            out.rows_mut(0, 3).copy_from(&t);
            out.rows_mut(3, 3).copy_from(&w);
        }
    }
    out
}

pub(crate) fn finite_difference_jet<F: ShapeFields + ?Sized>(fields: &F, shape: &DVector<f64>) -> Result<ShapeJet> {
    let m = shape.len();
    let probes: Vec<(usize, f64)> = (0..m).flat_map(|k| [(k, 1.0), (k, -1.0)]).collect();
    let samples: Vec<ShapeSample> = probes
        .par_iter()
        .map(|&(k, sign)| {
            let mut x = shape.clone();
            x[k] += sign * SHAPE_FD_STEP * shape[k];
            fields.sample(&x)
        })
        .collect::<Result<_>>()?;
    let sample = fields.sample(shape)?;
    let mut d_mobility = Vec::with_capacity(m);
    let mut d_metric = Vec::with_capacity(m);
    for k in 0..m {
        let h = 2.0 * SHAPE_FD_STEP * shape[k];
        let (plus, minus) = (&samples[2 * k], &samples[2 * k + 1]);
        d_mobility.push((&plus.mobility - &minus.mobility) / h);
        d_metric.push((&plus.metric - &minus.metric) / h);
    }
    Ok(ShapeJet { sample, d_mobility, d_metric })
}

fn shape_key(shape: &DVector<f64>) -> Vec<u64> {
    shape.iter().map(|v| v.to_bits()).collect()
}

/// Boundary-element fields, memoised per shape.
pub struct BemShapeFields {
    model: SwimmerModel,
    points_per_sphere: usize,
    viscosity: f64,
    cache: Mutex<HashMap<Vec<u64>, ShapeSample>>,
}

impl BemShapeFields {
    pub fn new(model: SwimmerModel, points_per_sphere: usize, viscosity: f64) -> Self {
        BemShapeFields { model, points_per_sphere, viscosity, cache: Mutex::new(HashMap::new()) }
    }

    pub fn points_per_sphere(&self) -> usize {
        self.points_per_sphere
    }

    pub fn viscosity(&self) -> f64 {
        self.viscosity
    }

    /// Full reduction at the reference pose, bypassing the cache.
    pub fn mobility_field(&self, shape: &DVector<f64>) -> Result<MobilityField> {
        let s = State::new(shape.clone(), self.model.origin());
        mobility_at(&self.model, &s, self.points_per_sphere, self.viscosity)
    }

    pub fn cached(&self) -> usize {
        self.cache.lock().map(|c| c.len()).unwrap_or(0)
    }
}

impl ShapeFields for BemShapeFields {
    fn model(&self) -> &SwimmerModel {
        &self.model
    }

    fn sample(&self, shape: &DVector<f64>) -> Result<ShapeSample> {
        let key = shape_key(shape);
        if let Some(hit) = self.cache.lock().ok().and_then(|c| c.get(&key).cloned()) {
            return Ok(hit);
        }
        let field = self.mobility_field(shape)?;
        let sample = ShapeSample { mobility: field.mobility, metric: field.metric };
        if let Ok(mut c) = self.cache.lock() {
            if c.len() >= CACHE_LIMIT {
                c.clear();
            }
            c.insert(key, sample.clone());
        }
        Ok(sample)
    }
}

/// First-order point-force fields.
pub struct FarFieldShapeFields {
    model: SwimmerModel,
    viscosity: f64,
}

impl FarFieldShapeFields {
    pub fn new(model: SwimmerModel, viscosity: f64) -> Self {
        FarFieldShapeFields { model, viscosity }
    }
}

impl ShapeFields for FarFieldShapeFields {
    fn model(&self) -> &SwimmerModel {
        &self.model
    }

    fn sample(&self, shape: &DVector<f64>) -> Result<ShapeSample> {
        let s = State::new(shape.clone(), self.model.origin());
        let ff = farfield::far_field_mobility(&self.model, &s, self.viscosity)?;
        Ok(ShapeSample { mobility: ff.mobility, metric: ff.metric })
    }
}

/// Samples of a field source on a tensor grid with the same log-spaced nodes on every axis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ShapeTable {
    pub kind: SwimmerKind,
    pub radius: f64,
    pub viscosity: f64,
    pub points_per_sphere: usize,
    pub lower: f64,
    pub upper: f64,
    pub nodes: usize,
    /// Node-major; per node the mobility (column-major) followed by the metric.
    pub values: Vec<f64>,
}

impl ShapeTable {
    pub fn node(&self, i: usize) -> f64 {
        let (l, u) = (self.lower.ln(), self.upper.ln());
        (l + (u - l) * i as f64 / (self.nodes - 1) as f64).exp()
    }

    fn entry_len(kind: SwimmerKind) -> usize {
        let (m, p) = (kind.shape_dim(), kind.position_dim());
        p * m + m * m
    }

    pub fn build(
        source: &BemShapeFields,
        lower: f64,
        upper: f64,
        nodes: usize,
    ) -> Result<Self> {
        let model = source.model();
        if nodes < 4 || !(lower > 0.0 && upper > lower) {
            return Err(Error::invalid(format!("invalid table axis [{lower}, {upper}] with {nodes} nodes")));
        }
        let m = model.shape_dim();
        let count = nodes.pow(m as u32);
        let mut table = ShapeTable {
            kind: model.kind,
            radius: model.radius,
            viscosity: source.viscosity(),
            points_per_sphere: source.points_per_sphere(),
            lower,
            upper,
            nodes,
            values: Vec::new(),
        };
        let axis: Vec<f64> = (0..nodes).map(|i| table.node(i)).collect();
        let entries: Vec<Vec<f64>> = (0..count)
            .into_par_iter()
            .map(|idx| {
                let mut rest = idx;
                let mut shape = DVector::zeros(m);
                for k in (0..m).rev() {
                    shape[k] = axis[rest % nodes];
                    rest /= nodes;
                }
                let s = source.mobility_field(&shape)?;
                Ok(s.mobility.iter().chain(s.metric.iter()).copied().collect())
            })
            .collect::<Result<_>>()?;
        table.values = entries.concat();
        Ok(table)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let tmp = path.with_extension("partial");
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let t: ShapeTable = serde_json::from_slice(&std::fs::read(path)?)?;
        let expect = t.nodes.pow(t.kind.shape_dim() as u32) * Self::entry_len(t.kind);
        if t.values.len() != expect {
            return Err(Error::invalid(format!(
                "table has {} values, expected {expect}",
                t.values.len()
            )));
        }
        Ok(t)
    }

    /// Loads a compatible table from `path` or builds and stores one.
    pub fn load_or_build(source: &BemShapeFields, lower: f64, upper: f64, nodes: usize, path: &Path) -> Result<Self> {
        if let Ok(t) = Self::load(path) {
            let m = source.model();
            if t.kind == m.kind
                && t.radius == m.radius
                && t.viscosity == source.viscosity()
                && t.points_per_sphere == source.points_per_sphere()
                && t.lower == lower
                && t.upper == upper
                && t.nodes == nodes
            {
                return Ok(t);
            }
        }
        let t = Self::build(source, lower, upper, nodes)?;
        t.save(path)?;
        Ok(t)
    }
}

/// Tensor cubic-spline interpolant of a [`ShapeTable`] in logarithmic shape coordinates.
pub struct TabulatedShapeFields {
    model: SwimmerModel,
    table: ShapeTable,
    spline: UniformCubicSpline,
}

impl TabulatedShapeFields {
    pub fn new(model: SwimmerModel, table: ShapeTable) -> Result<Self> {
        if table.kind != model.kind || table.radius != model.radius {
            return Err(Error::invalid("table was built for a different swimmer"));
        }
        let spline = UniformCubicSpline::new(table.lower.ln(), table.upper.ln(), table.nodes)?;
        Ok(TabulatedShapeFields { model, table, spline })
    }

    pub fn table(&self) -> &ShapeTable {
        &self.table
    }

    fn axis_weights(&self, shape: &DVector<f64>) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        let n = self.table.nodes;
        shape
            .iter()
            .enumerate()
            .map(|(k, &x)| {
                if !(x >= self.table.lower && x <= self.table.upper) {
                    return Err(Error::OutOfBounds { index: k, value: x, lower: self.table.lower, upper: self.table.upper });
                }
                let (mut w, mut dw) = (vec![0.0; n], vec![0.0; n]);
                self.spline.weights_into(x.ln(), &mut w, &mut dw);
                dw.iter_mut().for_each(|d| *d /= x);
                Ok((w, dw))
            })
            .collect()
    }

    fn contract(&self, weights: &[&[f64]]) -> Vec<f64> {
        let n = self.table.nodes;
        let e = ShapeTable::entry_len(self.table.kind);
        let mut owned: Option<Vec<f64>> = None;
        let mut len = self.table.values.len() / e;
        for w in weights.iter().rev() {
            let cur = owned.as_deref().unwrap_or(&self.table.values);
            let outer = len / n;
            let mut next = vec![0.0; outer * e];
            for o in 0..outer {
                let dst = &mut next[o * e..(o + 1) * e];
                for (i, &wi) in w.iter().enumerate() {
                    if wi == 0.0 {
                        continue;
                    }
                    let src = &cur[(o * n + i) * e..(o * n + i + 1) * e];
                    for (d, s) in dst.iter_mut().zip(src) {
                        *d += wi * s;
                    }
                }
            }
            owned = Some(next);
            len = outer;
        }
        owned.unwrap_or_else(|| self.table.values.clone())
    }

    fn unpack(&self, flat: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let (m, p) = (self.model.shape_dim(), self.model.position_dim());
        let mobility = DMatrix::from_column_slice(p, m, &flat[..p * m]);
        let metric = DMatrix::from_column_slice(m, m, &flat[p * m..]);
        (mobility, metric)
    }
}

impl ShapeFields for TabulatedShapeFields {
    fn model(&self) -> &SwimmerModel {
        &self.model
    }

    fn sample(&self, shape: &DVector<f64>) -> Result<ShapeSample> {
        let w = self.axis_weights(shape)?;
        let refs: Vec<&[f64]> = w.iter().map(|(v, _)| v.as_slice()).collect();
        let (mobility, metric) = self.unpack(&self.contract(&refs));
        Ok(ShapeSample { mobility, metric })
    }

    fn jet(&self, shape: &DVector<f64>) -> Result<ShapeJet> {
        let w = self.axis_weights(shape)?;
        let m = shape.len();
        let sample = self.sample(shape)?;
        let mut d_mobility = Vec::with_capacity(m);
        let mut d_metric = Vec::with_capacity(m);
        for k in 0..m {
            let refs: Vec<&[f64]> = w
                .iter()
                .enumerate()
                .map(|(j, (v, d))| if j == k { d.as_slice() } else { v.as_slice() })
                .collect();
            let (dm, dg) = self.unpack(&self.contract(&refs));
            d_mobility.push(dm);
            d_metric.push(dg);
        }
        Ok(ShapeJet { sample, d_mobility, d_metric })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn table_reproduces_source_at_nodes_and_between() {
        let model = SwimmerModel::new(SwimmerKind::ThreeSphereLine, 0.05);
        let bem = BemShapeFields::new(model.clone(), 34, 1.0);
        let table = ShapeTable::build(&bem, 0.15, 0.9, 10).unwrap();
        let tab = TabulatedShapeFields::new(model, table.clone()).unwrap();
        let at_node = DVector::from_vec(vec![table.node(3), table.node(6)]);
        let a = tab.sample(&at_node).unwrap();
        let b = bem.sample(&at_node).unwrap();
        assert_relative_eq!(a.mobility, b.mobility, max_relative = 1e-12);
        let between = DVector::from_vec(vec![0.37, 0.52]);
        let a = tab.sample(&between).unwrap();
        let b = bem.sample(&between).unwrap();
        assert_relative_eq!(a.mobility, b.mobility, max_relative = 1e-3);
        assert_relative_eq!(a.metric, b.metric, max_relative = 1e-3);
        assert!(tab.sample(&DVector::from_vec(vec![0.1, 0.5])).is_err());
    }

    #[test]
    fn tabulated_jet_matches_finite_differences() {
        let model = SwimmerModel::new(SwimmerKind::ThreeSphereLine, 0.05);
        let far = FarFieldShapeFields::new(model.clone(), 1.0);
        let nodes = 8;
        let (lo, hi) = (0.2f64, 1.0f64);
        let mut table = ShapeTable {
            kind: model.kind,
            radius: model.radius,
            viscosity: 1.0,
            points_per_sphere: 0,
            lower: lo,
            upper: hi,
            nodes,
            values: Vec::new(),
        };
        for i in 0..nodes {
            for j in 0..nodes {
                let s = far.sample(&DVector::from_vec(vec![table.node(i), table.node(j)])).unwrap();
                table.values.extend(s.mobility.iter().chain(s.metric.iter()));
            }
        }
        let tab = TabulatedShapeFields::new(model, table).unwrap();
        let x = DVector::from_vec(vec![0.43, 0.61]);
        let jet = tab.jet(&x).unwrap();
        let fd = finite_difference_jet(&tab, &x).unwrap();
        for k in 0..2 {
            assert_relative_eq!(jet.d_mobility[k], fd.d_mobility[k], max_relative = 1e-6, epsilon = 1e-10);
            assert_relative_eq!(jet.d_metric[k], fd.d_metric[k], max_relative = 1e-6, epsilon = 1e-10);
        }
    }

    #[test]
    fn bem_cache_returns_identical_samples() {
        let model = SwimmerModel::new(SwimmerKind::ThreeSphereLine, 0.05);
        let bem = BemShapeFields::new(model, 34, 1.0);
        let x = DVector::from_vec(vec![0.3, 0.4]);
        let a = bem.sample(&x).unwrap();
        let b = bem.sample(&x).unwrap();
        assert_eq!(a, b);
        assert_eq!(bem.cached(), 1);
    }
}
