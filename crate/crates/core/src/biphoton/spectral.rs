use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rayon::prelude::*;

use super::grid::{Domain, JointGrid};
use super::modes::FieldEnhancement;
use super::pump::PumpPulse;
use crate::axis::UniformAxis;
use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JsaOptions {
    /// Points per axis.
    pub points: usize,
    /// Axis span in units of the broader signal/idler linewidth.
    pub span_linewidths: f64,
    /// Relative accuracy demanded of the pump convolution integral.
    pub tolerance: f64,
    /// Half-width of the pump integration window, in units of the wider of
    /// the pump spectral width `2π/T` and the pump linewidth.
    pub pump_window: f64,
    pub max_halvings: usize,
}

impl Default for JsaOptions {
    fn default() -> Self {
        Self {
            points: 512,
            span_linewidths: 64.0,
            tolerance: 1e-4,
            pump_window: 80.0,
            max_halvings: 6,
        }
    }
}

/// Frame frequencies for signal and idler: shifted from the resonances by
/// half the energy mismatch so that they sum to twice the pump carrier.
pub(crate) fn pair_carriers(s: f64, i: f64, pump_carrier: f64) -> [f64; 2] {
    let mismatch = s + i - 2.0 * pump_carrier;
    [s - 0.5 * mismatch, i - 0.5 * mismatch]
}

/// Joint spectral amplitude on default axes centred on the signal and idler resonances.
pub fn compute_jsa(
    fe_p: &dyn FieldEnhancement,
    fe_s: &dyn FieldEnhancement,
    fe_i: &dyn FieldEnhancement,
    pulse: &PumpPulse,
    opts: &JsaOptions,
) -> Result<JointGrid> {
    if opts.points < 2 {
        return domain("at least two points per axis are required");
    }
    let lw = fe_s.linewidth().max(fe_i.linewidth());
    let step = opts.span_linewidths * lw / opts.points as f64;
    let axis_s = UniformAxis::fft_centered(fe_s.center_omega(), step, opts.points);
    let axis_i = UniformAxis::fft_centered(fe_i.center_omega(), step, opts.points);
    compute_jsa_on(fe_p, fe_s, fe_i, pulse, &axis_s, &axis_i, opts)
}

/// `JSA(ω_s, ω_i) ∝ F_s(ω_s) F_i(ω_i) ∫dω α(ω) α(ω_s+ω_i−ω) F_p(ω) F_p(ω_s+ω_i−ω)`,
/// normalized to unit probability.
pub fn compute_jsa_on(
    fe_p: &dyn FieldEnhancement,
    fe_s: &dyn FieldEnhancement,
    fe_i: &dyn FieldEnhancement,
    pulse: &PumpPulse,
    axis_s: &UniformAxis,
    axis_i: &UniformAxis,
    opts: &JsaOptions,
) -> Result<JointGrid> {
    pulse.validate()?;
    for (axis, fe, name) in [(axis_s, fe_s, "signal"), (axis_i, fe_i, "idler")] {
        if axis.len < 2 || !(axis.step > 0.0) {
            return domain("axes need at least two increasing points");
        }
        let covered = (axis.len as f64 * axis.step) / fe.linewidth();
        if covered < 10.0 {
            return Err(Error::Coverage(format!(
                "{name} axis covers {covered:.2} linewidths, fewer than 10"
            )));
        }
    }

    let conv = PumpConvolution::new(fe_p, pulse, opts)?;
    let same_step = ((axis_s.step - axis_i.step) / axis_s.step).abs() < 1e-12;
    let (ns, ni) = (axis_s.len, axis_i.len);
    let omegas: Vec<f64> = if same_step {
        (0..ns + ni - 1)
            .map(|k| axis_s.start + axis_i.start + k as f64 * axis_s.step)
            .collect()
    } else {
        (0..ns)
            .flat_map(|r| (0..ni).map(move |c| axis_s.value(r) + axis_i.value(c)))
            .collect()
    };
    let s_vals = conv.evaluate(&omegas, opts)?;

    let fs: Vec<Complex64> = axis_s.iter().map(|w| fe_s.value(w)).collect();
    let fi: Vec<Complex64> = axis_i.iter().map(|w| fe_i.value(w)).collect();
    let values = DMatrix::from_fn(ns, ni, |r, c| {
        let s = if same_step { s_vals[r + c] } else { s_vals[r * ni + c] };
        fs[r] * fi[c] * s
    });
    let mut grid = JointGrid {
        axis_s: *axis_s,
        axis_i: *axis_i,
        values,
        domain: Domain::Spectral,
        carrier: pair_carriers(fe_s.center_omega(), fe_i.center_omega(), pulse.carrier_omega),
        conjugate_start: None,
    };
    grid.normalize()?;
    Ok(grid)
}

/// Trapezoidal evaluation of the two-photon pump spectrum
/// `S(Ω) = (1/2π) ∫dω P(ω) P(Ω−ω)` with `P = α F_p`.
struct PumpConvolution<'a> {
    fe_p: &'a dyn FieldEnhancement,
    pulse: &'a PumpPulse,
    lo: f64,
    hi: f64,
    step: f64,
}

impl<'a> PumpConvolution<'a> {
    fn new(fe_p: &'a dyn FieldEnhancement, pulse: &'a PumpPulse, opts: &JsaOptions) -> Result<Self> {
        let spectral_width = 2.0 * PI / pulse.duration;
        let lw = fe_p.linewidth();
        let half = opts.pump_window * spectral_width.max(lw);
        let a = pulse.carrier_omega.min(fe_p.center_omega());
        let b = pulse.carrier_omega.max(fe_p.center_omega());
        Ok(Self {
            fe_p,
            pulse,
            lo: a - half,
            hi: b + half,
            step: spectral_width.min(lw) / 8.0,
        })
    }

    fn p(&self, w: f64) -> Complex64 {
        self.pulse.spectral_amplitude(w - self.pulse.carrier_omega) * self.fe_p.value(w)
    }

    fn evaluate(&self, omegas: &[f64], opts: &JsaOptions) -> Result<Vec<Complex64>> {
        let n = ((self.hi - self.lo) / self.step).ceil() as usize;
        let mut h = (self.hi - self.lo) / n as f64;
        let nodes: Vec<(f64, Complex64)> = (0..=n)
            .map(|j| {
                let w = self.lo + j as f64 * h;
                let wt = if j == 0 || j == n { 0.5 } else { 1.0 };
                (w, self.p(w) * wt)
            })
            .collect();
        let mut sums: Vec<Complex64> = omegas
            .par_iter()
            .map(|&o| nodes.iter().map(|&(w, pw)| pw * self.p(o - w)).sum::<Complex64>() * h)
            .collect();
        let mut count = n;
        for _ in 0..opts.max_halvings {
            // Midpoints of the current nodes refine the trapezoid rule.
            let mids: Vec<(f64, Complex64)> = (0..count)
                .map(|j| {
                    let w = self.lo + (j as f64 + 0.5) * h;
                    (w, self.p(w))
                })
                .collect();
            let half = 0.5 * h;
            let refined: Vec<Complex64> = omegas
                .par_iter()
                .zip(sums.par_iter())
                .map(|(&o, &prev)| {
                    0.5 * prev + mids.iter().map(|&(w, pw)| pw * self.p(o - w)).sum::<Complex64>() * half
                })
                .collect();
            let scale = refined.iter().map(|v| v.norm()).fold(0.0, f64::max);
            let err = refined
                .iter()
                .zip(&sums)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max);
            if scale == 0.0 {
                return Err(Error::Domain("pump two-photon spectrum vanishes on the grid".into()));
            }
            sums = refined;
            h = half;
            count *= 2;
            if err / scale < opts.tolerance {
                let norm = 1.0 / (2.0 * PI);
                return Ok(sums.into_iter().map(|v| v * norm).collect());
            }
            if count > 1 << 24 {
                break;
            }
        }
        Err(Error::Resolution(
            "pump convolution did not reach the requested accuracy".into(),
        ))
    }
}
