//! Collocation boundary-element discretisation of the exterior Stokes problem around a set
//! of spheres: the discrete map from boundary velocities to surface force densities.

mod grid;
mod kernel;

use std::io::Write;
use std::path::Path;

use faer::linalg::solvers::{PartialPivLu, Solve};
use faer::{Mat, MatRef};
use nalgebra::{Matrix3, Vector3};
use rayon::prelude::*;

pub use grid::{build_grid, fibonacci_sphere, is_fibonacci, QuadratureGrid};
pub use kernel::stokeslet;
use kernel::stokeslet_unchecked;

use crate::error::{Error, Result};
use crate::geometry::BallConfiguration;

pub const DEFAULT_POINTS_PER_SPHERE: usize = 89;

/// Relative residual accepted from a direct solve.
pub const SOLVE_RESIDUAL_TOLERANCE: f64 = 1e-10;

/// Smallest accepted ratio of smallest to largest pivot.
const PIVOT_RATIO_FLOOR: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FieldRole {
    Velocity,
    ForceDensity,
}

/// One vector per quadrature point, sphere by sphere.
#[derive(Clone, Debug, PartialEq)]
pub struct SurfaceField {
    pub role: FieldRole,
    pub values: Vec<Vector3<f64>>,
}

impl SurfaceField {
    pub fn velocity(values: Vec<Vector3<f64>>) -> Self {
        SurfaceField { role: FieldRole::Velocity, values }
    }

    pub fn zeros(role: FieldRole, n: usize) -> Self {
        SurfaceField { role, values: vec![Vector3::zeros(); n] }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v.norm_squared()).sum::<f64>().sqrt()
    }
}

pub struct BemSystem {
    grid: QuadratureGrid,
    config: BallConfiguration,
    viscosity: f64,
    matrix: Mat<f64>,
    lu: PartialPivLu<f64>,
}

impl std::fmt::Debug for BemSystem {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BemSystem")
            .field("spheres", &self.grid.sphere_count())
            .field("points_per_sphere", &self.grid.points_per_sphere)
            .field("viscosity", &self.viscosity)
            .finish()
    }
}

impl BemSystem {
    /// Builds the grid on `config` and assembles the factorised collocation matrix.
    pub fn new(config: &BallConfiguration, radius: f64, n_q: usize, viscosity: f64) -> Result<Self> {
        let grid = build_grid(config, radius, n_q)?;
        Self::assemble(config, grid, viscosity)
    }

    /// Off-diagonal blocks are the stokeslet between points times the source weight.
    ///
    /// The diagonal block at each point is the row-sum correction that makes a uniform
    /// traction on an isolated sphere reproduce the exact rigid-translation solution
    /// (velocity `2a/(3η)` times traction).
    pub fn assemble(config: &BallConfiguration, grid: QuadratureGrid, viscosity: f64) -> Result<Self> {
        if !(viscosity > 0.0) {
            return Err(Error::invalid(format!("viscosity must be positive, got {viscosity}")));
        }
        config.check_admissible(grid.radius)?;
        let n = grid.len();
        let dim = 3 * n;
        let self_term = 2.0 * grid.radius / (3.0 * viscosity);
        let mut data = vec![0.0; dim * dim];
        // Point j owns columns 3j..3j+3, contiguous in column-major storage.
        data.par_chunks_mut(3 * dim).enumerate().for_each(|(j, cols)| {
            let qj = grid.points[j];
            let wj = grid.weights[j];
            let sj = grid.sphere_of(j);
            let mut diag = Matrix3::identity() * self_term;
            for i in 0..n {
                if i == j {
                    continue;
                }
                let r = qj - grid.points[i];
                let g = stokeslet_unchecked(&r, r.norm(), viscosity);
                let block = g * wj;
                if grid.sphere_of(i) == sj {
                    diag -= g * grid.weights[i];
                }
                for c in 0..3 {
                    for r in 0..3 {
                        cols[c * dim + 3 * i + r] = block[(r, c)];
                    }
                }
            }
            for c in 0..3 {
                for r in 0..3 {
                    cols[c * dim + 3 * j + r] = diag[(r, c)];
                }
            }
        });
        let matrix = MatRef::from_column_major_slice(&data, dim, dim).to_owned();
        let lu = matrix.partial_piv_lu();
        let u = lu.U();
        let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
        for k in 0..dim {
            let d = u[(k, k)].abs();
            lo = lo.min(d);
            hi = hi.max(d);
        }
        let pivot_ratio = if hi > 0.0 { lo / hi } else { 0.0 };
        if !(pivot_ratio > PIVOT_RATIO_FLOOR) || !pivot_ratio.is_finite() {
            return Err(Error::Factorization { pivot_ratio });
        }
        Ok(BemSystem { grid, config: config.clone(), viscosity, matrix, lu })
    }

    pub fn grid(&self) -> &QuadratureGrid {
        &self.grid
    }

    pub fn config(&self) -> &BallConfiguration {
        &self.config
    }

    pub fn viscosity(&self) -> f64 {
        self.viscosity
    }

    pub fn dim(&self) -> usize {
        3 * self.grid.len()
    }

    pub fn matrix(&self) -> MatRef<'_, f64> {
        self.matrix.as_ref()
    }

    fn check_len(&self, u: &SurfaceField) -> Result<()> {
        if u.len() != self.grid.len() {
            return Err(Error::invalid(format!(
                "surface field has {} points, grid has {}",
                u.len(),
                self.grid.len()
            )));
        }
        Ok(())
    }

    /// Force density `f` with `A f = u`.
    pub fn solve_dn(&self, u: &SurfaceField) -> Result<SurfaceField> {
        Ok(self.solve_many(std::slice::from_ref(u))?.pop().expect("one right-hand side"))
    }

    /// Solves for several boundary velocities with one factorisation.
    pub fn solve_many(&self, us: &[SurfaceField]) -> Result<Vec<SurfaceField>> {
        for u in us {
            self.check_len(u)?;
        }
        let dim = self.dim();
        let rhs = Mat::from_fn(dim, us.len(), |r, c| us[c].values[r / 3][r % 3]);
        let sol = self.lu.solve(&rhs);
        let resid = &self.matrix * &sol - &rhs;
        let mut out = Vec::with_capacity(us.len());
        for (c, u) in us.iter().enumerate() {
            let rnorm = resid.col(c).norm_l2();
            let unorm = u.norm();
            if rnorm > SOLVE_RESIDUAL_TOLERANCE * unorm.max(f64::MIN_POSITIVE) && rnorm > 0.0 {
                return Err(Error::Residual { residual: rnorm / unorm, tolerance: SOLVE_RESIDUAL_TOLERANCE });
            }
            let values = (0..self.grid.len())
                .map(|p| Vector3::new(sol[(3 * p, c)], sol[(3 * p + 1, c)], sol[(3 * p + 2, c)]))
                .collect();
            out.push(SurfaceField { role: FieldRole::ForceDensity, values });
        }
        Ok(out)
    }

    /// `‖A f − u‖ / ‖u‖`.
    pub fn relative_residual(&self, f: &SurfaceField, u: &SurfaceField) -> f64 {
        let dim = self.dim();
        let fm = Mat::from_fn(dim, 1, |r, _| f.values[r / 3][r % 3]);
        let au = &self.matrix * &fm;
        let mut s = 0.0;
        for r in 0..dim {
            let d = au[(r, 0)] - u.values[r / 3][r % 3];
            s += d * d;
        }
        s.sqrt() / u.norm().max(f64::MIN_POSITIVE)
    }

    /// Weighted inner product `Σ a·b ω`.
    pub fn inner(&self, a: &SurfaceField, b: &SurfaceField) -> f64 {
        a.values
            .iter()
            .zip(&b.values)
            .zip(&self.grid.weights)
            .map(|((x, y), w)| x.dot(y) * w)
            .sum()
    }

    pub fn total_force(&self, f: &SurfaceField) -> Vector3<f64> {
        f.values.iter().zip(&self.grid.weights).map(|(v, w)| v * *w).sum()
    }

    pub fn total_torque(&self, f: &SurfaceField, origin: &Vector3<f64>) -> Vector3<f64> {
        f.values
            .iter()
            .zip(&self.grid.points)
            .zip(&self.grid.weights)
            .map(|((v, x), w)| (x - origin).cross(v) * *w)
            .sum()
    }

    /// Force on each sphere separately.
    pub fn sphere_forces(&self, f: &SurfaceField) -> Vec<Vector3<f64>> {
        (0..self.grid.sphere_count())
            .map(|s| self.grid.range(s).map(|i| f.values[i] * self.grid.weights[i]).sum())
            .collect()
    }

    /// Rate of work done on the fluid by boundary velocity `u`.
    pub fn dissipated_power(&self, u: &SurfaceField) -> Result<f64> {
        let f = self.solve_dn(u)?;
        let power = self.inner(u, &f);
        if power < -1e-10 {
            return Err(Error::NegativePower { power });
        }
        Ok(power.max(0.0))
    }

    /// Boundary velocity of a rigid motion of the whole assembly.
    pub fn rigid_velocity(&self, v: &Vector3<f64>, omega: &Vector3<f64>, origin: &Vector3<f64>) -> SurfaceField {
        SurfaceField::velocity(self.grid.points.iter().map(|x| v + omega.cross(&(x - origin))).collect())
    }

    /// Boundary velocity that translates each sphere with its own velocity.
    pub fn sphere_translations(&self, velocities: &[Vector3<f64>]) -> SurfaceField {
        SurfaceField::velocity((0..self.grid.len()).map(|i| velocities[self.grid.sphere_of(i)]).collect())
    }

    /// Writes the grid as CSV and the collocation matrix as raw little-endian `f64`
    /// (column-major, preceded by its dimension as a `u64`).
    pub fn dump(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut g = std::io::BufWriter::new(std::fs::File::create(dir.join("bem_grid.csv"))?);
        writeln!(g, "sphere,x,y,z,weight")?;
        for (i, (p, w)) in self.grid.points.iter().zip(&self.grid.weights).enumerate() {
            writeln!(g, "{},{:.17e},{:.17e},{:.17e},{:.17e}", self.grid.sphere_of(i), p.x, p.y, p.z, w)?;
        }
        g.flush()?;
        let mut m = std::io::BufWriter::new(std::fs::File::create(dir.join("bem_matrix.bin"))?);
        let dim = self.dim();
        m.write_all(&(dim as u64).to_le_bytes())?;
        for c in 0..dim {
            for r in 0..dim {
                m.write_all(&self.matrix[(r, c)].to_le_bytes())?;
            }
        }
        m.flush()?;
        Ok(())
    }
}
