use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::axis::UniformAxis;
use crate::error::{domain, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PulseShape {
    /// Ideal rectangle on `[0, T]`.
    #[default]
    Rectangular,
    /// Gaussian centred at `T/2` whose intensity FWHM is `T`.
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpPulse {
    pub shape: PulseShape,
    /// Duration `T` (s).
    pub duration: f64,
    /// Carrier angular frequency of the pump laser (rad/s).
    pub carrier_omega: f64,
    /// Energy per pulse (J).
    pub pulse_energy: f64,
    pub repetition_rate: f64,
}

impl PumpPulse {
    pub fn rectangular(duration: f64, carrier_omega: f64) -> Self {
        Self {
            shape: PulseShape::Rectangular,
            duration,
            carrier_omega,
            pulse_energy: 10e-12,
            repetition_rate: 10e6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return domain("pulse duration must be positive");
        }
        if !(self.repetition_rate > 0.0) || self.repetition_rate * self.duration >= 1.0 {
            return domain("repetition period must exceed the pulse duration");
        }
        if !(self.carrier_omega > 0.0) || !(self.pulse_energy >= 0.0) {
            return domain("carrier and pulse energy must be positive");
        }
        Ok(())
    }

    /// Intensity standard deviation of the gaussian shape.
    pub fn sigma_t(&self) -> f64 {
        self.duration / (2.0 * (2.0 * 2f64.ln()).sqrt())
    }

    /// Field envelope in the carrier frame.
    pub fn envelope(&self, t: f64) -> f64 {
        match self.shape {
            PulseShape::Rectangular => {
                if (0.0..self.duration).contains(&t) {
                    1.0
                } else {
                    0.0
                }
            }
            PulseShape::Gaussian => {
                let s = self.sigma_t();
                let x = t - 0.5 * self.duration;
                (-x * x / (4.0 * s * s)).exp()
            }
        }
    }

    /// Interval outside which the envelope is negligible.
    pub fn support(&self) -> (f64, f64) {
        match self.shape {
            PulseShape::Rectangular => (0.0, self.duration),
            PulseShape::Gaussian => {
                let h = 12.0 * self.sigma_t();
                (0.5 * self.duration - h, 0.5 * self.duration + h)
            }
        }
    }

    /// Unnormalized spectral amplitude `∫ E(t) e^{iνt} dt` at detuning `ν` from the carrier.
    pub fn spectral_amplitude(&self, nu: f64) -> Complex64 {
        let t = self.duration;
        match self.shape {
            PulseShape::Rectangular => {
                let x = nu * t;
                if x.abs() < 1e-6 {
                    Complex64::new(t * (1.0 - x * x / 6.0), 0.5 * t * x)
                } else {
                    // (e^{ix} − 1)/(iν)
                    Complex64::new(x.sin(), 1.0 - x.cos()) / nu
                }
            }
            PulseShape::Gaussian => {
                let s = self.sigma_t();
                let mag = 2.0 * s * (PI).sqrt() * (-nu * nu * s * s).exp();
                Complex64::from_polar(mag, 0.5 * nu * t)
            }
        }
    }

    /// `∫|α(ν)|² dν` over all detunings.
    pub fn spectral_norm_sq(&self) -> f64 {
        match self.shape {
            PulseShape::Rectangular => 2.0 * PI * self.duration,
            PulseShape::Gaussian => 2.0 * PI * self.sigma_t() * (2.0 * PI).sqrt(),
        }
    }
}

/// Pump spectral amplitude on an absolute frequency axis, normalized so that
/// `Σ|α|² Δω = 1`.
pub fn pump_spectrum(pulse: &PumpPulse, axis: &UniformAxis) -> Result<Vec<Complex64>> {
    pulse.validate()?;
    if axis.len < 2 || !(axis.step > 0.0) {
        return domain("frequency axis needs at least two increasing points");
    }
    if axis.span() < 20.0 / pulse.duration {
        return Err(Error::Truncation(format!(
            "axis spans {:.3e} rad/s, narrower than 20/T = {:.3e}",
            axis.span(),
            20.0 / pulse.duration
        )));
    }
    let mut alpha: Vec<Complex64> = axis
        .iter()
        .map(|w| pulse.spectral_amplitude(w - pulse.carrier_omega))
        .collect();
    let captured: f64 = alpha.iter().map(|a| a.norm_sqr()).sum::<f64>() * axis.step;
    let lost = 1.0 - captured / pulse.spectral_norm_sq();
    if lost > 0.01 {
        return Err(Error::Truncation(format!(
            "axis captures only {:.2}% of the pump spectral norm",
            100.0 * (1.0 - lost)
        )));
    }
    let scale = 1.0 / (captured).sqrt();
    for a in &mut alpha {
        *a *= scale;
    }
    Ok(alpha)
}
