use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};

/// Free-space Stokes Green's function (velocity at `r` due to a unit point force at the origin).
pub fn stokeslet(r: &Vector3<f64>, eta: f64) -> Result<Matrix3<f64>> {
    let d = r.norm();
    if d == 0.0 {
        return Err(Error::SingularPoint);
    }
    Ok(stokeslet_unchecked(r, d, eta))
}

#[inline]
pub(crate) fn stokeslet_unchecked(r: &Vector3<f64>, d: f64, eta: f64) -> Matrix3<f64> {
    let c = 1.0 / (8.0 * std::f64::consts::PI * eta * d);
    let rr = r * r.transpose() / (d * d);
    (Matrix3::identity() + rr) * c
}
