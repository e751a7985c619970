//! Physical constants and unit conversions shared by every module.

use std::f64::consts::PI;

/// Speed of light in vacuum, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Angular frequency (rad/s) of light with vacuum wavelength `wavelength` (m).
pub fn omega_from_wavelength(wavelength: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / wavelength
}

pub fn wavelength_from_omega(omega: f64) -> f64 {
    2.0 * PI * SPEED_OF_LIGHT / omega
}

/// Converts an ordinary frequency in Hz to angular frequency.
pub fn hz_to_rad(hz: f64) -> f64 {
    2.0 * PI * hz
}

pub fn rad_to_hz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}

/// Power attenuation coefficient (1/m) from a loss in dB/cm.
pub fn db_per_cm_to_alpha(db_per_cm: f64) -> f64 {
    db_per_cm * 100.0 * std::f64::consts::LN_10 / 10.0
}

pub fn to_db(power_ratio: f64) -> f64 {
    10.0 * power_ratio.log10()
}
