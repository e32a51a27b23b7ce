use nalgebra::DVector;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Prescribed shape history on `[0, duration]`.
pub trait ShapePath: Sync {
    fn duration(&self) -> f64;
    fn shape(&self, t: f64) -> DVector<f64>;
    fn rate(&self, t: f64) -> DVector<f64>;
}

/// `base_i + amplitude_i (sin(2πt/T + phase_i) − sin(phase_i))`, which starts and ends at `base`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SinusoidStroke {
    pub base: DVector<f64>,
    pub amplitude: DVector<f64>,
    pub phase: DVector<f64>,
    pub period: f64,
}

impl SinusoidStroke {
    pub fn new(base: DVector<f64>, amplitude: DVector<f64>, phase: DVector<f64>, period: f64) -> Self {
        SinusoidStroke { base, amplitude, phase, period }
    }

    /// Equal amplitudes with phases spread evenly over a cycle; two components are a quarter
    /// cycle apart so the loop encloses area.
    pub fn phase_shifted(base: DVector<f64>, amplitude: f64, period: f64) -> Self {
        let m = base.len();
        let step = 2.0 * PI / m.max(4) as f64;
        SinusoidStroke {
            amplitude: DVector::from_element(m, amplitude),
            phase: DVector::from_fn(m, |i, _| if m >= 3 { 2.0 * PI * i as f64 / m as f64 } else { step * i as f64 }),
            base,
            period,
        }
    }

    pub fn constant(base: DVector<f64>, period: f64) -> Self {
        let m = base.len();
        SinusoidStroke { base, amplitude: DVector::zeros(m), phase: DVector::zeros(m), period }
    }
}

impl ShapePath for SinusoidStroke {
    fn duration(&self) -> f64 {
        self.period
    }

    fn shape(&self, t: f64) -> DVector<f64> {
        let w = 2.0 * PI / self.period;
        DVector::from_fn(self.base.len(), |i, _| {
            self.base[i] + self.amplitude[i] * ((w * t + self.phase[i]).sin() - self.phase[i].sin())
        })
    }

    fn rate(&self, t: f64) -> DVector<f64> {
        let w = 2.0 * PI / self.period;
        DVector::from_fn(self.base.len(), |i, _| self.amplitude[i] * w * (w * t + self.phase[i]).cos())
    }
}

/// `inner(φ(t))` for an increasing map `φ` from `[0, duration]` onto the inner path's interval.
pub struct TimeWarp<'a, F> {
    pub inner: &'a dyn ShapePath,
    pub duration: f64,
    /// Returns `(φ(t), φ'(t))`.
    pub map: F,
}

impl<'a, F: Fn(f64) -> (f64, f64) + Sync> ShapePath for TimeWarp<'a, F> {
    fn duration(&self) -> f64 {
        self.duration
    }

    fn shape(&self, t: f64) -> DVector<f64> {
        self.inner.shape((self.map)(t).0)
    }

    fn rate(&self, t: f64) -> DVector<f64> {
        let (s, ds) = (self.map)(t);
        self.inner.rate(s) * ds
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn sinusoid_is_closed_and_rate_is_derivative() {
        let s = SinusoidStroke::phase_shifted(DVector::from_vec(vec![0.4, 0.4, 0.4]), 0.05, 1.0);
        assert_relative_eq!(s.shape(0.0), s.shape(1.0), epsilon = 1e-15);
        let h = 1e-6;
        let fd = (s.shape(0.3 + h) - s.shape(0.3 - h)) / (2.0 * h);
        assert_relative_eq!(s.rate(0.3), fd, epsilon = 1e-8);
    }

    #[test]
    fn warp_chain_rule() {
        let s = SinusoidStroke::phase_shifted(DVector::from_vec(vec![0.4, 0.5]), 0.05, 1.0);
        let w = TimeWarp { inner: &s, duration: 2.0, map: |t: f64| (t * t / 4.0, t / 2.0) };
        assert_relative_eq!(w.shape(2.0), s.shape(1.0));
        let h = 1e-6;
        let fd = (w.shape(1.3 + h) - w.shape(1.3 - h)) / (2.0 * h);
        assert_relative_eq!(w.rate(1.3), fd, epsilon = 1e-8);
    }
}
