use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::BallConfiguration;

/// Fibonacci numbers usable as points per sphere.
pub fn is_fibonacci(n: usize) -> bool {
    fibonacci_predecessor(n).is_some()
}

fn fibonacci_predecessor(n: usize) -> Option<usize> {
    let (mut a, mut b) = (1usize, 2usize);
    while b < n {
        (a, b) = (b, a + b);
    }
    (b == n).then_some(a)
}

/// Unit-sphere lattice for `n = F_m` points: heights uniform in `z`, azimuth advancing by
/// `2π F_{m-1}/F_m` per point.
///
/// The azimuth is centred on the middle index so the lattice maps to itself under
/// `(x, y, z) -> (x, -y, -z)`.
pub fn fibonacci_sphere(n: usize) -> Result<Vec<Vector3<f64>>> {
    let prev = fibonacci_predecessor(n)
        .filter(|_| n >= 34)
        .ok_or_else(|| Error::invalid(format!("points per sphere must be a Fibonacci number >= 34, got {n}")))?;
    let step = 2.0 * std::f64::consts::PI * prev as f64 / n as f64;
    let mid = (n as f64 - 1.0) / 2.0;
    Ok((0..n)
        .map(|k| {
            let z = (2 * k + 1) as f64 / n as f64 - 1.0;
            let rho = (1.0 - z * z).max(0.0).sqrt();
            let phi = (k as f64 - mid) * step;
            Vector3::new(rho * phi.cos(), rho * phi.sin(), z)
        })
        .collect())
}

#[derive(Clone, Debug)]
pub struct QuadratureGrid {
    pub radius: f64,
    pub points_per_sphere: usize,
    /// Lab-frame points, sphere by sphere.
    pub points: Vec<Vector3<f64>>,
    /// Offset of each point from its sphere centre (length `radius`).
    pub offsets: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
}

impl QuadratureGrid {
    pub fn sphere_count(&self) -> usize {
        self.points.len() / self.points_per_sphere
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn sphere_of(&self, point: usize) -> usize {
        point / self.points_per_sphere
    }

    pub fn range(&self, sphere: usize) -> std::ops::Range<usize> {
        sphere * self.points_per_sphere..(sphere + 1) * self.points_per_sphere
    }

    /// Equal-weight quadrature of a scalar over one sphere.
    pub fn integrate(&self, sphere: usize, f: impl Fn(&Vector3<f64>) -> f64) -> f64 {
        self.range(sphere).map(|i| f(&self.offsets[i]) * self.weights[i]).sum()
    }
}

/// Replicates the reference lattice on every sphere, oriented by the ball frames.
pub fn build_grid(config: &BallConfiguration, radius: f64, n_q: usize) -> Result<QuadratureGrid> {
    let unit = fibonacci_sphere(n_q)?;
    let w = 4.0 * std::f64::consts::PI * radius * radius / n_q as f64;
    let total = config.centers.len() * n_q;
    let mut points = Vec::with_capacity(total);
    let mut offsets = Vec::with_capacity(total);
    for (c, frame) in config.centers.iter().zip(&config.frames) {
        for u in &unit {
            let r = frame * u * radius;
            offsets.push(r);
            points.push(c + r);
        }
    }
    Ok(QuadratureGrid {
        radius,
        points_per_sphere: n_q,
        points,
        offsets,
        weights: vec![w; total],
    })
}
