use nalgebra::DMatrix;
use rand::Rng;

use crate::axis::UniformAxis;
use crate::biphoton::{Domain, JointGrid};
use crate::error::{domain, Result};

/// Inverse-CDF sampler for a gridded joint temporal intensity. Samples are
/// spread uniformly over the cell around each grid point.
#[derive(Debug, Clone)]
pub struct JtiSampler {
    pub axis_s: UniformAxis,
    pub axis_i: UniformAxis,
    /// Cumulative cell probabilities, signal index outer.
    cdf: Vec<f64>,
}

impl JtiSampler {
    /// `jti` must be a probability density: `Σ jti·Δs·Δi = 1` within 1e-6.
    pub fn new(jti: &DMatrix<f64>, axis_s: UniformAxis, axis_i: UniformAxis) -> Result<Self> {
        if jti.shape() != (axis_s.len, axis_i.len) {
            return domain("intensity shape does not match its axes");
        }
        if jti.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return domain("intensity has negative or non-finite entries");
        }
        let cell = axis_s.step * axis_i.step;
        let mut cdf = Vec::with_capacity(jti.len());
        let mut acc = 0.0;
        for r in 0..jti.nrows() {
            for c in 0..jti.ncols() {
                acc += jti[(r, c)] * cell;
                cdf.push(acc);
            }
        }
        if (acc - 1.0).abs() > 1e-6 {
            return domain(format!("intensity integrates to {acc}, not 1"));
        }
        Ok(Self { axis_s, axis_i, cdf })
    }

    pub fn from_grid(grid: &JointGrid) -> Result<Self> {
        if grid.domain != Domain::Temporal {
            return domain("sampling requires a temporal amplitude");
        }
        Self::new(&grid.intensity(), grid.axis_s, grid.axis_i)
    }

    /// Probability mass of each cell, signal index outer.
    pub fn cell_probability(&self, r: usize, c: usize) -> f64 {
        let k = r * self.axis_i.len + c;
        let prev = if k == 0 { 0.0 } else { self.cdf[k - 1] };
        (self.cdf[k] - prev) / self.total()
    }

    fn total(&self) -> f64 {
        self.cdf[self.cdf.len() - 1]
    }

    /// Draws `(t_s, t_i)` in seconds.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let u = rng.random::<f64>() * self.total();
        let k = self.cdf.partition_point(|&c| c <= u).min(self.cdf.len() - 1);
        let (r, c) = (k / self.axis_i.len, k % self.axis_i.len);
        let ds = rng.random::<f64>() - 0.5;
        let di = rng.random::<f64>() - 0.5;
        (
            self.axis_s.value(r) + ds * self.axis_s.step,
            self.axis_i.value(c) + di * self.axis_i.step,
        )
    }
}
