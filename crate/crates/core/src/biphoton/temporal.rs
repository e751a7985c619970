use nalgebra::DMatrix;
use num_complex::Complex64;

use super::grid::{Domain, JointGrid};
use super::pump::{PulseShape, PumpPulse};
use super::spectral::pair_carriers;
use crate::axis::UniformAxis;
use crate::device::ResonanceSpec;
use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemporalOptions {
    pub points: usize,
    /// Fine integration steps per shortest lifetime.
    pub substeps: usize,
}

impl Default for TemporalOptions {
    fn default() -> Self {
        Self {
            points: 512,
            substeps: 200,
        }
    }
}

/// Axis from the pulse start to `T + max(8·max(τ_s, τ_i), 6·τ_p)` with `points` samples.
pub fn default_time_axis(
    resonances: &[ResonanceSpec; 3],
    pulse: &PumpPulse,
    points: usize,
) -> UniformAxis {
    let [p, s, i] = resonances;
    let (start, end) = pulse.support();
    let tail = (8.0 * s.lifetime().max(i.lifetime())).max(6.0 * p.lifetime());
    let start = start.min(0.0);
    let span = end.max(pulse.duration) + tail - start;
    UniformAxis {
        start,
        step: span / points as f64,
        len: points,
    }
}

/// Joint temporal amplitude from driven single-pole modes:
/// `A(t_s, t_i) ∝ ∫dt p(t)² h_s(t_s − t) h_i(t_i − t)`, where `p` is the
/// intracavity pump driven by the pulse and `h_x(τ) = Θ(τ) e^{−(1/(2τ_x) + iΔ_x)τ}`.
/// Resonances are given in pump, signal, idler order.
pub fn jta_time_domain(
    resonances: &[ResonanceSpec; 3],
    pulse: &PumpPulse,
    axis_s: &UniformAxis,
    axis_i: &UniformAxis,
    opts: &TemporalOptions,
) -> Result<JointGrid> {
    pulse.validate()?;
    let [rp, rs, ri] = resonances;
    let (ts, ti) = (rs.lifetime(), ri.lifetime());
    let tau_min = ts.min(ti);
    for a in [axis_s, axis_i] {
        if a.len < 2 || !(a.step > 0.0) {
            return domain("time axes need at least two increasing points");
        }
        if a.step > tau_min / 20.0 {
            return Err(Error::Resolution(format!(
                "time step {:.3e} s exceeds min(τ)/20 = {:.3e} s",
                a.step,
                tau_min / 20.0
            )));
        }
        let needed = pulse.support().1.max(pulse.duration) + 6.0 * ts.max(ti);
        if a.end() < needed {
            return Err(Error::Coverage(format!(
                "time axis ends at {:.3e} s, before pulse end + 6τ = {:.3e} s",
                a.end(),
                needed
            )));
        }
    }

    let carrier = pair_carriers(rs.center_omega, ri.center_omega, pulse.carrier_omega);
    let ap = Complex64::new(0.5 / rp.lifetime(), rp.center_omega - pulse.carrier_omega);
    let as_ = Complex64::new(0.5 / ts, rs.center_omega - carrier[0]);
    let ai = Complex64::new(0.5 / ti, ri.center_omega - carrier[1]);
    let b = as_ + ai;

    // Fine grid for the accumulated source H(u) = ∫_{-∞}^u p(t)² e^{−b(u−t)} dt.
    let t0 = pulse.support().0;
    let t_end = axis_s.end().max(axis_i.end());
    let mut h = rp.lifetime().min(tau_min) / opts.substeps.max(1) as f64;
    if pulse.shape == PulseShape::Gaussian {
        h = h.min(pulse.sigma_t() / 20.0);
    }
    let n = (((t_end - t0) / h).ceil() as usize).max(1);
    let h = (t_end - t0) / n as f64;
    let pump = intracavity_pump(pulse, ap, t0, h, n);
    let decay = (-b * h).exp();
    let mut acc = vec![Complex64::new(0.0, 0.0); n + 1];
    for k in 0..n {
        let (p0, p1) = (pump[k] * pump[k], pump[k + 1] * pump[k + 1]);
        acc[k + 1] = acc[k] * decay + 0.5 * h * (p0 * decay + p1);
    }
    let source_at = |u: f64| -> Complex64 {
        if u <= t0 {
            return Complex64::new(0.0, 0.0);
        }
        let x = (u - t0) / h;
        let k = (x.floor() as usize).min(n - 1);
        let f = x - k as f64;
        acc[k] * (1.0 - f) + acc[k + 1] * f
    };

    let values = DMatrix::from_fn(axis_s.len, axis_i.len, |r, c| {
        let (u, v) = (axis_s.value(r), axis_i.value(c));
        let m = u.min(v);
        if m <= t0 {
            return Complex64::new(0.0, 0.0);
        }
        source_at(m) * (-as_ * (u - m) - ai * (v - m)).exp()
    });
    let dw = |a: &UniformAxis| 2.0 * std::f64::consts::PI / (a.len as f64 * a.step);
    let mut grid = JointGrid {
        axis_s: *axis_s,
        axis_i: *axis_i,
        values,
        domain: Domain::Temporal,
        carrier,
        conjugate_start: Some([
            rs.center_omega - dw(axis_s) * (axis_s.len / 2) as f64,
            ri.center_omega - dw(axis_i) * (axis_i.len / 2) as f64,
        ]),
    };
    grid.normalize()?;
    Ok(grid)
}

/// Intracavity pump `dp/dt = −a p + E(t)` sampled at `t0 + k h`, `k = 0..=n`.
fn intracavity_pump(pulse: &PumpPulse, a: Complex64, t0: f64, h: f64, n: usize) -> Vec<Complex64> {
    match pulse.shape {
        PulseShape::Rectangular => {
            let t_end = pulse.duration;
            let at_end = (1.0 - (-a * t_end).exp()) / a;
            (0..=n)
                .map(|k| {
                    let t = t0 + k as f64 * h;
                    if t <= 0.0 {
                        Complex64::new(0.0, 0.0)
                    } else if t < t_end {
                        (1.0 - (-a * t).exp()) / a
                    } else {
                        at_end * (-a * (t - t_end)).exp()
                    }
                })
                .collect()
        }
        PulseShape::Gaussian => {
            let decay = (-a * h).exp();
            let mut p = vec![Complex64::new(0.0, 0.0); n + 1];
            let mut prev_drive = pulse.envelope(t0);
            for k in 0..n {
                let drive = pulse.envelope(t0 + (k + 1) as f64 * h);
                p[k + 1] = p[k] * decay + 0.5 * h * (prev_drive * decay + drive);
                prev_drive = drive;
            }
            p
        }
    }
}
