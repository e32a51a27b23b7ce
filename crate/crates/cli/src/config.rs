use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Deserialize;
use sphereswim::dynamics::{BemShapeFields, FarFieldShapeFields, ShapeFields, ShapeTable, TabulatedShapeFields};
use sphereswim::optimizer::OptimizationProblem;
use sphereswim::SwimmerModel;

use crate::CliError;

pub const DEFAULT_TABLE_NODES: usize = 14;

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DragConfig {
    #[serde(default = "default_radius")]
    pub radius: f64,
    #[serde(default = "one")]
    pub viscosity: f64,
    #[serde(default = "default_ladder")]
    pub ladder: Vec<usize>,
    /// Largest accepted relative error.
    #[serde(default = "default_drag_tolerance")]
    pub tolerance: f64,
}

fn default_radius() -> f64 {
    0.05
}

fn default_ladder() -> Vec<usize> {
    vec![34, 89, 233, 610]
}

fn default_drag_tolerance() -> f64 {
    5e-3
}

impl Default for DragConfig {
    fn default() -> Self {
        DragConfig { radius: default_radius(), viscosity: 1.0, ladder: default_ladder(), tolerance: default_drag_tolerance() }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MobilityConfig {
    pub model: SwimmerModel,
    pub shape: Vec<f64>,
    /// Chart coordinates of the pose; the origin when absent.
    #[serde(default)]
    pub position: Option<Vec<f64>>,
    #[serde(default = "one")]
    pub viscosity: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FieldsKind {
    #[default]
    Bem,
    FarField,
    Table,
}

#[derive(Clone, Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableConfig {
    pub lower: Option<f64>,
    pub upper: Option<f64>,
    pub nodes: Option<usize>,
    /// Cache file; `shape_table.json` in the output directory by default.
    pub path: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StrokeSpec {
    /// `base_i + amplitude_i (sin(2πt/period + phase_i) − sin(phase_i))`.
    Sinusoid { base: Vec<f64>, amplitude: Vec<f64>, phase: Vec<f64>, period: f64 },
    /// The stroke of an `optimize` result file.
    Optimized { path: PathBuf },
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub model: SwimmerModel,
    pub stroke: StrokeSpec,
    /// Chart coordinates at `t = 0`; the stroke's own start or the origin when absent.
    #[serde(default)]
    pub start: Option<Vec<f64>>,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub fields: FieldsKind,
    #[serde(default)]
    pub table: TableConfig,
    #[serde(default = "one")]
    pub viscosity: f64,
    #[serde(default)]
    pub plot: PlotConfig,
}

fn default_steps() -> usize {
    sphereswim::dynamics::DEFAULT_STEPS
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    /// Magnification of the centre path relative to the swimmer; automatic when absent.
    #[serde(default)]
    pub path_gain: Option<f64>,
    #[serde(default = "one")]
    pub angle_gain: f64,
}

fn default_true() -> bool {
    true
}

impl Default for PlotConfig {
    fn default() -> Self {
        PlotConfig { enabled: true, path_gain: None, angle_gain: 1.0 }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BracketsConfig {
    pub model: SwimmerModel,
    pub shape: Vec<f64>,
    #[serde(default)]
    pub position: Option<Vec<f64>>,
    /// Finite-difference step; relative to the mean arm length by default.
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default)]
    pub fields: FieldsKind,
    #[serde(default)]
    pub table: TableConfig,
    #[serde(default = "one")]
    pub viscosity: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizeConfig {
    pub problem: OptimizationProblem,
    #[serde(default = "table_fields")]
    pub fields: FieldsKind,
    #[serde(default)]
    pub table: TableConfig,
    #[serde(default = "one")]
    pub viscosity: f64,
    /// Result file whose stroke starts the solve.
    #[serde(default)]
    pub guess: Option<PathBuf>,
    #[serde(default = "default_steps")]
    pub replay_steps: usize,
    #[serde(default)]
    pub plot: PlotConfig,
}

fn table_fields() -> FieldsKind {
    FieldsKind::Table
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchScanConfig {
    pub problem: OptimizationProblem,
    /// Start angles; seven evenly spaced over `[0, π/3]` by default.
    #[serde(default)]
    pub angles: Option<Vec<f64>>,
    #[serde(default = "default_seeds")]
    pub seeds: usize,
    #[serde(default = "table_fields")]
    pub fields: FieldsKind,
    #[serde(default)]
    pub table: TableConfig,
    #[serde(default = "one")]
    pub viscosity: f64,
}

fn default_seeds() -> usize {
    3
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
}

/// Shape fields of the requested kind; tables are loaded from or stored in their cache file.
pub fn build_fields(
    kind: FieldsKind,
    model: &SwimmerModel,
    table: &TableConfig,
    n_q: usize,
    viscosity: f64,
    out: &Path,
) -> Result<Box<dyn ShapeFields>, CliError> {
    Ok(match kind {
        FieldsKind::Bem => Box::new(BemShapeFields::new(model.clone(), n_q, viscosity)),
        FieldsKind::FarField => Box::new(FarFieldShapeFields::new(model.clone(), viscosity)),
        FieldsKind::Table => {
            let (lower, upper, nodes) = table_axis(model, table)?;
            let path = table.path.clone().unwrap_or_else(|| out.join("shape_table.json"));
            let source = BemShapeFields::new(model.clone(), n_q, viscosity);
            log::info!("loading or building shape table {}", path.display());
            let t = ShapeTable::load_or_build(&source, lower, upper, nodes, &path)?;
            Box::new(TabulatedShapeFields::new(model.clone(), t)?)
        }
    })
}

/// Table axis covering the model bounds with a margin on each side.
pub fn table_axis(model: &SwimmerModel, table: &TableConfig) -> Result<(f64, f64, usize), CliError> {
    let lo = model.shape_lower.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = model.shape_upper.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lower = table.lower.unwrap_or(0.85 * lo);
    let upper = match table.upper {
        Some(u) => u,
        None if hi.is_finite() => 1.15 * hi,
        None => return Err(CliError::Usage("unbounded shapes need an explicit table.upper".into())),
    };
    let nodes = table.nodes.unwrap_or(DEFAULT_TABLE_NODES);
    if !(lower > 0.0 && upper > lower) || nodes < 4 {
        return Err(CliError::Usage(format!("invalid table axis [{lower}, {upper}] with {nodes} nodes")));
    }
    Ok((lower, upper, nodes))
}
