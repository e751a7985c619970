use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::grid::{Domain, JointGrid};
use crate::axis::UniformAxis;
use crate::error::{Error, Result};

/// Fraction of the time window placed before `t = 0` when no conjugate origin is recorded.
const LEAD_FRACTION: f64 = 0.02;

/// `A(t_s, t_i) = (1/2π) ∬ J(ω_s, ω_i) e^{−i(ν_s t_s + ν_i t_i)} dω_s dω_i` with
/// `ν` the detuning from the frame carrier; unitary on the sampled grid.
pub fn jsa_to_jta(jsa: &JointGrid) -> Result<JointGrid> {
    if jsa.domain != Domain::Spectral {
        return Err(Error::Domain("expected a spectral amplitude".into()));
    }
    let mut time_axes = [jsa.axis_s, jsa.axis_i];
    for (k, a) in [jsa.axis_s, jsa.axis_i].iter().enumerate() {
        let dt = 2.0 * PI / (a.len as f64 * a.step);
        let start = match jsa.conjugate_start {
            Some(c) => c[k],
            None => -LEAD_FRACTION * a.len as f64 * dt,
        };
        time_axes[k] = UniformAxis { start, step: dt, len: a.len };
    }
    let mut values = jsa.values.clone();
    let mut planner = FftPlanner::new();
    transform_axis(&mut values, 0, &jsa.axis_s, &time_axes[0], jsa.carrier[0], -1.0, &mut planner);
    transform_axis(&mut values, 1, &jsa.axis_i, &time_axes[1], jsa.carrier[1], -1.0, &mut planner);
    Ok(JointGrid {
        axis_s: time_axes[0],
        axis_i: time_axes[1],
        values,
        domain: Domain::Temporal,
        carrier: jsa.carrier,
        conjugate_start: Some([jsa.axis_s.start, jsa.axis_i.start]),
    })
}

/// Inverse of [`jsa_to_jta`].
pub fn jta_to_jsa(jta: &JointGrid) -> Result<JointGrid> {
    if jta.domain != Domain::Temporal {
        return Err(Error::Domain("expected a temporal amplitude".into()));
    }
    let mut freq_axes = [jta.axis_s, jta.axis_i];
    for (k, a) in [jta.axis_s, jta.axis_i].iter().enumerate() {
        let dw = 2.0 * PI / (a.len as f64 * a.step);
        let start = match jta.conjugate_start {
            Some(c) => c[k],
            None => jta.carrier[k] - dw * (a.len / 2) as f64,
        };
        freq_axes[k] = UniformAxis { start, step: dw, len: a.len };
    }
    let mut values = jta.values.clone();
    let mut planner = FftPlanner::new();
    transform_axis(&mut values, 0, &jta.axis_s, &freq_axes[0], jta.carrier[0], 1.0, &mut planner);
    transform_axis(&mut values, 1, &jta.axis_i, &freq_axes[1], jta.carrier[1], 1.0, &mut planner);
    Ok(JointGrid {
        axis_s: freq_axes[0],
        axis_i: freq_axes[1],
        values,
        domain: Domain::Spectral,
        carrier: jta.carrier,
        conjugate_start: Some([jta.axis_s.start, jta.axis_i.start]),
    })
}

/// Applies `out_m = (Δin/√2π) Σ_k in_k e^{sign·i·x_k y_m}` along one matrix
/// axis, where the spectral coordinate is measured from `carrier`.
/// `sign = −1` maps frequency to time, `+1` time to frequency.
fn transform_axis(
    values: &mut DMatrix<Complex64>,
    dim: usize,
    from: &UniformAxis,
    to: &UniformAxis,
    carrier: f64,
    sign: f64,
    planner: &mut FftPlanner<f64>,
) {
    let n = from.len;
    // Shift the spectral axis into the carrier frame.
    let (x0, y0) = if sign < 0.0 {
        (from.start - carrier, to.start)
    } else {
        (from.start, to.start - carrier)
    };
    let fft: std::sync::Arc<dyn Fft<f64>> = if sign < 0.0 {
        planner.plan_fft_forward(n)
    } else {
        planner.plan_fft_inverse(n)
    };
    let pre: Vec<Complex64> = (0..n)
        .map(|k| Complex64::from_polar(1.0, sign * k as f64 * from.step * y0))
        .collect();
    let scale = from.step / (2.0 * PI).sqrt();
    let post: Vec<Complex64> = (0..n)
        .map(|m| Complex64::from_polar(scale, sign * x0 * (y0 + m as f64 * to.step)))
        .collect();
    let lines = if dim == 0 { values.ncols() } else { values.nrows() };
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for l in 0..lines {
        for k in 0..n {
            let v = if dim == 0 { values[(k, l)] } else { values[(l, k)] };
            buf[k] = v * pre[k];
        }
        fft.process(&mut buf);
        for m in 0..n {
            let v = buf[m] * post[m];
            if dim == 0 {
                values[(m, l)] = v;
            } else {
                values[(l, m)] = v;
            }
        }
    }
}
