//! Resonance configurations with Lorentzian modes, identified by their
//! (pump, signal, idler) loaded Q factors.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::grid::JointGrid;
use super::modes::LorentzianMode;
use super::pump::PumpPulse;
use super::spectral::{compute_jsa, JsaOptions};
use super::temporal::{default_time_axis, jta_time_domain, TemporalOptions};
use crate::device::{ResonanceSpec, Role, WaveguideParams};
use crate::error::Result;
use crate::units::omega_from_wavelength;

pub const PUMP_WAVELENGTH: f64 = 1543e-9;
/// Signal and idler sit one main FSR above and below the pump.
pub const PAIR_OFFSET_HZ: f64 = 200e9;
pub const PULSE_DURATION: f64 = 300e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QConfig {
    /// Q_p = Q_s = Q_i = 8×10⁵.
    EqualQ,
    /// Q_p = 1.96×10⁶, Q_s = 6.1×10⁵, Q_i = 10⁶.
    HighPumpQ,
    /// Q_p = 3.3×10⁵, Q_s = 7.6×10⁵, Q_i = 1.1×10⁶.
    LowPumpQ,
}

impl QConfig {
    pub const ALL: [QConfig; 3] = [QConfig::EqualQ, QConfig::HighPumpQ, QConfig::LowPumpQ];

    pub fn preset(self) -> SourcePreset {
        match self {
            QConfig::EqualQ => SourcePreset::new([8e5, 8e5, 8e5]),
            QConfig::LowPumpQ => SourcePreset::new([3.3e5, 7.6e5, 1.1e6]),
            // The pump laser sits off the pump resonance and the three
            // resonances are not exactly equidistant; both offsets are in
            // units of the inverse pump lifetime.
            QConfig::HighPumpQ => SourcePreset {
                pump_detuning: HIGH_PUMP_Q_DETUNING,
                mismatch: HIGH_PUMP_Q_MISMATCH,
                ..SourcePreset::new([1.96e6, 6.1e5, 1e6])
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            QConfig::EqualQ => "equal-q",
            QConfig::HighPumpQ => "high-pump-q",
            QConfig::LowPumpQ => "low-pump-q",
        }
    }
}

pub const HIGH_PUMP_Q_DETUNING: f64 = 24.93205;
pub const HIGH_PUMP_Q_MISMATCH: f64 = 3.98366;

/// Three Lorentzian resonances plus a rectangular pump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourcePreset {
    /// Loaded Q of pump, signal, idler.
    pub q: [f64; 3],
    /// Pump resonance minus pump carrier, in units of 1/τ_p.
    pub pump_detuning: f64,
    /// `ω_s + ω_i − 2ω_p` of the resonance centres, in units of 1/τ_p.
    pub mismatch: f64,
    pub pulse_duration: f64,
    /// Intrinsic Q shared by all three resonances.
    pub intrinsic_q: f64,
}

impl SourcePreset {
    pub fn new(q: [f64; 3]) -> Self {
        Self {
            q,
            pump_detuning: 0.0,
            mismatch: 0.0,
            pulse_duration: PULSE_DURATION,
            intrinsic_q: WaveguideParams::default().intrinsic_q(omega_from_wavelength(PUMP_WAVELENGTH)),
        }
    }

    pub fn pump_carrier(&self) -> f64 {
        omega_from_wavelength(PUMP_WAVELENGTH)
    }

    pub fn pulse(&self) -> PumpPulse {
        PumpPulse::rectangular(self.pulse_duration, self.pump_carrier())
    }

    pub fn resonances(&self) -> Result<[ResonanceSpec; 3]> {
        let wl = self.pump_carrier();
        let tau_p = self.q[0] / wl;
        let dp = self.pump_detuning / tau_p;
        let pair_shift = 0.5 * (self.mismatch / tau_p + 2.0 * dp);
        let off = 2.0 * PI * PAIR_OFFSET_HZ;
        let centres = [wl + dp, wl + off + pair_shift, wl - off + pair_shift];
        let roles = [Role::Pump, Role::Signal, Role::Idler];
        let mk = |k: usize| ResonanceSpec::new(centres[k], self.q[k], self.intrinsic_q.max(self.q[k]), roles[k]);
        Ok([mk(0)?, mk(1)?, mk(2)?])
    }

    pub fn modes(&self) -> Result<[LorentzianMode; 3]> {
        let r = self.resonances()?;
        Ok([
            LorentzianMode::from_resonance(&r[0]),
            LorentzianMode::from_resonance(&r[1]),
            LorentzianMode::from_resonance(&r[2]),
        ])
    }

    /// Time-domain joint amplitude on the default time axis.
    pub fn jta(&self, opts: &TemporalOptions) -> Result<JointGrid> {
        let r = self.resonances()?;
        let pulse = self.pulse();
        let axis = default_time_axis(&r, &pulse, opts.points);
        jta_time_domain(&r, &pulse, &axis, &axis, opts)
    }

    /// Frequency-domain joint amplitude on default axes.
    pub fn jsa(&self, opts: &JsaOptions) -> Result<JointGrid> {
        let [p, s, i] = self.modes()?;
        compute_jsa(&p, &s, &i, &self.pulse(), opts)
    }
}
