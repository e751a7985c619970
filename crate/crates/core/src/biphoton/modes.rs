use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::device::{DeviceParams, ResonanceSpec};
use crate::error::{domain, Result};

/// Intracavity field per unit incident field, around one resonance.
pub trait FieldEnhancement: Sync {
    fn center_omega(&self) -> f64;
    /// Loaded FWHM linewidth (rad/s).
    fn linewidth(&self) -> f64;
    fn value(&self, omega: f64) -> Complex64;

    fn lifetime(&self) -> f64 {
        1.0 / self.linewidth()
    }
}

/// Single-pole mode `√(ηγ) / (γ/2 − i(ω − ω₀))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LorentzianMode {
    pub center_omega: f64,
    pub loaded_q: f64,
    pub escape_efficiency: f64,
}

impl LorentzianMode {
    pub fn new(center_omega: f64, loaded_q: f64, escape_efficiency: f64) -> Result<Self> {
        if !(center_omega > 0.0) || !(loaded_q > 0.0) {
            return domain("mode frequency and Q must be positive");
        }
        if !(escape_efficiency > 0.0 && escape_efficiency <= 1.0) {
            return domain("escape efficiency must lie in (0, 1]");
        }
        Ok(Self {
            center_omega,
            loaded_q,
            escape_efficiency,
        })
    }

    pub fn from_resonance(r: &ResonanceSpec) -> Self {
        Self {
            center_omega: r.center_omega,
            loaded_q: r.loaded_q,
            escape_efficiency: r.escape_efficiency(),
        }
    }
}

impl FieldEnhancement for LorentzianMode {
    fn center_omega(&self) -> f64 {
        self.center_omega
    }

    fn linewidth(&self) -> f64 {
        self.center_omega / self.loaded_q
    }

    fn value(&self, omega: f64) -> Complex64 {
        let g = self.linewidth();
        (self.escape_efficiency * g).sqrt() / Complex64::new(0.5 * g, -(omega - self.center_omega))
    }
}

/// Field enhancement taken from the full transfer-matrix device around one resonance.
#[derive(Debug, Clone)]
pub struct DeviceMode {
    pub device: DeviceParams,
    pub resonance: ResonanceSpec,
}

impl DeviceMode {
    pub fn near(device: &DeviceParams, omega: f64, role: crate::device::Role) -> Result<Self> {
        let resonance = device.resonance_near(omega, role)?;
        Ok(Self {
            device: device.clone(),
            resonance,
        })
    }
}

impl FieldEnhancement for DeviceMode {
    fn center_omega(&self) -> f64 {
        self.resonance.center_omega
    }

    fn linewidth(&self) -> f64 {
        self.resonance.linewidth()
    }

    fn value(&self, omega: f64) -> Complex64 {
        self.device.field_enhancement(omega)
    }
}
