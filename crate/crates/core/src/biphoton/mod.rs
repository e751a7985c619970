//! Two-photon amplitudes of pairs generated by spontaneous four-wave mixing:
//! the joint spectral amplitude from cavity field enhancements, its Fourier
//! conjugate in time, and a direct time-domain construction from driven
//! single-pole modes.

mod grid;
mod modes;
pub mod presets;
mod pump;
mod spectral;
mod temporal;
mod transform;

pub use grid::{Domain, JointGrid};
pub use modes::{DeviceMode, FieldEnhancement, LorentzianMode};
pub use presets::{QConfig, SourcePreset};
pub use pump::{pump_spectrum, PulseShape, PumpPulse};
pub use spectral::{compute_jsa, compute_jsa_on, JsaOptions};
pub use temporal::{default_time_axis, jta_time_domain, TemporalOptions};
pub use transform::{jsa_to_jta, jta_to_jsa};

/// Element-wise squared modulus of a temporal amplitude.
pub fn jti(jta: &JointGrid) -> crate::Result<nalgebra::DMatrix<f64>> {
    if jta.domain != Domain::Temporal {
        return Err(crate::Error::Domain("JTI requires a temporal amplitude".into()));
    }
    Ok(jta.intensity())
}

/// `|⟨a|b⟩|² / (⟨a|a⟩⟨b|b⟩)` for two amplitudes sampled on the same grid.
pub fn fidelity(a: &JointGrid, b: &JointGrid) -> crate::Result<f64> {
    if a.values.shape() != b.values.shape() {
        return Err(crate::Error::Domain("grids have different shapes".into()));
    }
    let mut overlap = num_complex::Complex64::new(0.0, 0.0);
    let mut na = 0.0;
    let mut nb = 0.0;
    for (x, y) in a.values.iter().zip(b.values.iter()) {
        overlap += x.conj() * y;
        na += x.norm_sqr();
        nb += y.norm_sqr();
    }
    if na == 0.0 || nb == 0.0 {
        return Err(crate::Error::Domain("zero amplitude".into()));
    }
    Ok(overlap.norm_sqr() / (na * nb))
}
