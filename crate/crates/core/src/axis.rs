use serde::{Deserialize, Serialize};

/// Uniformly spaced sample points `start + k·step`, `k = 0..len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformAxis {
    pub start: f64,
    pub step: f64,
    pub len: usize,
}

impl UniformAxis {
    /// Axis of `len` points centred on `center` spanning `span`.
    pub fn centered(center: f64, span: f64, len: usize) -> Self {
        let step = span / (len.max(2) - 1) as f64;
        Self {
            start: center - 0.5 * span,
            step,
            len,
        }
    }

    /// FFT-style axis: `len` points of spacing `step` with `center` at index `len / 2`.
    pub fn fft_centered(center: f64, step: f64, len: usize) -> Self {
        Self {
            start: center - step * (len / 2) as f64,
            step,
            len,
        }
    }

    pub fn end(&self) -> f64 {
        self.value(self.len.saturating_sub(1))
    }

    /// Index of the sample nearest to `x`, if `x` lies within half a step of the axis.
    pub fn index_of(&self, x: f64) -> Option<usize> {
        let k = ((x - self.start) / self.step).round();
        if k < 0.0 || k >= self.len as f64 {
            None
        } else {
            Some(k as usize)
        }
    }

    pub fn value(&self, k: usize) -> f64 {
        self.start + self.step * k as f64
    }

    pub fn span(&self) -> f64 {
        self.step * (self.len.saturating_sub(1)) as f64
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.len).map(|k| self.value(k))
    }
}
