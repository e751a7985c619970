//! TOML configuration files. Keys carry their unit as a suffix; every key is
//! optional and falls back to the documented default.

use std::f64::consts::PI;
use std::path::Path;

use pairsim::biphoton::{PulseShape, PumpPulse, QConfig, SourcePreset};
use pairsim::device::{DeviceParams, ResonanceSpec, Role};
use pairsim::tags::{DetectionChain, PairStatistics};
use pairsim::units::omega_from_wavelength;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

fn read_toml(path: &Path) -> Result<toml::Table, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::from_io(path, e))?;
    toml::from_str(&text).map_err(|e| CliError::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

fn parse<T: for<'de> Deserialize<'de>>(path: &Path, table: toml::Table) -> Result<T, CliError> {
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| CliError::Config {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Device file: any subset of the device fields plus an optional
/// `target_loaded_q`, which recalibrates the MZI phase at the pump wavelength.
pub fn load_device(path: Option<&Path>) -> Result<DeviceParams, CliError> {
    let Some(path) = path else {
        return Ok(DeviceParams::default());
    };
    let mut table = read_toml(path)?;
    let target = match table.remove("target_loaded_q") {
        None => None,
        Some(v) => Some(v.as_float().or_else(|| v.as_integer().map(|i| i as f64)).ok_or_else(|| {
            CliError::Config {
                path: path.display().to_string(),
                message: "target_loaded_q must be a number".into(),
            }
        })?),
    };
    let defaults = toml::Value::try_from(DeviceParams::default()).expect("device serializes");
    let mut merged = defaults.as_table().cloned().expect("table");
    for (k, v) in table {
        match (merged.get_mut(&k), v) {
            (Some(toml::Value::Table(base)), toml::Value::Table(over)) => base.extend(over),
            (_, v) => {
                merged.insert(k, v);
            }
        }
    }
    let mut device: DeviceParams = parse(path, merged)?;
    device.validate()?;
    if let Some(q) = target {
        let omega = omega_from_wavelength(pairsim::biphoton::presets::PUMP_WAVELENGTH);
        device.calibrate_mzi_for_q(omega, q)?;
    }
    Ok(device)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Time,
    Frequency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistics {
    #[default]
    Thermal,
    Poisson,
    Fixed,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SourceConfig {
    /// `equal-q`, `high-pump-q` or `low-pump-q`.
    pub preset: Option<String>,
    pub pump_q: Option<f64>,
    pub signal_q: Option<f64>,
    pub idler_q: Option<f64>,
    pub intrinsic_q: Option<f64>,
    pub pump_detuning_per_tau: Option<f64>,
    pub mismatch_per_tau: Option<f64>,
    /// Take the three loaded Q values from the device model.
    pub from_device: bool,
    pub pulse_shape: PulseShape,
    pub pulse_duration_ps: f64,
    pub pulse_energy_pj: f64,
    pub repetition_rate_hz: f64,
    pub grid_points: usize,
    pub method: Method,
    pub resonator_mean_pairs: f64,
    pub waveguide_pairs_per_pulse: f64,
    pub noise_mean_photons_signal: f64,
    pub noise_mean_photons_idler: f64,
    /// Defaults to the inverse purity of the simulated amplitude.
    pub schmidt_number: Option<f64>,
    pub escape_efficiency_signal: Option<f64>,
    pub escape_efficiency_idler: Option<f64>,
    /// Overrides the escape efficiencies with the symmetric value reaching this target.
    pub target_heralding_efficiency: Option<f64>,
    pub statistics: Statistics,
    pub fixed_pairs: u32,
}

impl Default for SourceConfig {
    fn default() -> Self {
        Self {
            preset: None,
            pump_q: None,
            signal_q: None,
            idler_q: None,
            intrinsic_q: None,
            pump_detuning_per_tau: None,
            mismatch_per_tau: None,
            from_device: false,
            pulse_shape: PulseShape::Rectangular,
            pulse_duration_ps: 300.0,
            pulse_energy_pj: 10.0,
            repetition_rate_hz: 10e6,
            grid_points: 512,
            method: Method::Time,
            resonator_mean_pairs: 0.1,
            waveguide_pairs_per_pulse: 0.0,
            noise_mean_photons_signal: 0.0,
            noise_mean_photons_idler: 0.0,
            schmidt_number: None,
            escape_efficiency_signal: None,
            escape_efficiency_idler: None,
            target_heralding_efficiency: None,
            statistics: Statistics::Thermal,
            fixed_pairs: 1,
        }
    }
}

pub fn load_source(path: &Path) -> Result<SourceConfig, CliError> {
    let table = read_toml(path)?;
    parse(path, table)
}

fn preset_named(name: &str) -> Option<QConfig> {
    QConfig::ALL.into_iter().find(|q| q.name() == name)
}

impl SourceConfig {
    pub fn statistics(&self) -> PairStatistics {
        match self.statistics {
            Statistics::Thermal => PairStatistics::Thermal,
            Statistics::Poisson => PairStatistics::Poisson,
            Statistics::Fixed => PairStatistics::Fixed(self.fixed_pairs),
        }
    }

    /// Resolved resonance triplet description.
    pub fn preset(&self, device: &DeviceParams, path: &Path) -> Result<SourcePreset, CliError> {
        let bad = |message: String| CliError::Config {
            path: path.display().to_string(),
            message,
        };
        let mut p = match &self.preset {
            Some(name) => preset_named(name)
                .ok_or_else(|| bad(format!("unknown preset `{name}`")))?
                .preset(),
            None => SourcePreset::new([f64::NAN; 3]),
        };
        if self.from_device {
            let wp = p.pump_carrier();
            let off = 2.0 * PI * pairsim::biphoton::presets::PAIR_OFFSET_HZ;
            let q = |w: f64, role: Role| -> Result<ResonanceSpec, CliError> { Ok(device.resonance_near(w, role)?) };
            let rp = q(wp, Role::Pump)?;
            p.q = [
                rp.loaded_q,
                q(wp + off, Role::Signal)?.loaded_q,
                q(wp - off, Role::Idler)?.loaded_q,
            ];
            p.intrinsic_q = rp.intrinsic_q;
        }
        for (k, v) in [self.pump_q, self.signal_q, self.idler_q].into_iter().enumerate() {
            if let Some(v) = v {
                p.q[k] = v;
            }
        }
        if p.q.iter().any(|q| !q.is_finite()) {
            return Err(bad("pump_q, signal_q and idler_q are required without a preset".into()));
        }
        if let Some(v) = self.intrinsic_q {
            p.intrinsic_q = v;
        }
        if let Some(v) = self.pump_detuning_per_tau {
            p.pump_detuning = v;
        }
        if let Some(v) = self.mismatch_per_tau {
            p.mismatch = v;
        }
        p.pulse_duration = self.pulse_duration_ps * 1e-12;
        Ok(p)
    }

    pub fn pulse(&self, preset: &SourcePreset) -> PumpPulse {
        PumpPulse {
            shape: self.pulse_shape,
            duration: self.pulse_duration_ps * 1e-12,
            carrier_omega: preset.pump_carrier(),
            pulse_energy: self.pulse_energy_pj * 1e-12,
            repetition_rate: self.repetition_rate_hz,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainConfig {
    pub detector_efficiency: f64,
    pub transmittivity_signal: f64,
    pub transmittivity_idler: f64,
    pub jitter_ps: f64,
    pub dark_count_rate_hz: f64,
    pub window_ns: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        let d = DetectionChain::default();
        Self {
            detector_efficiency: d.detector_efficiency,
            transmittivity_signal: d.transmittivity[0],
            transmittivity_idler: d.transmittivity[1],
            jitter_ps: d.jitter_sigma * 1e12,
            dark_count_rate_hz: d.dark_count_rate,
            window_ns: d.window * 1e9,
        }
    }
}

impl ChainConfig {
    pub fn chain(&self) -> DetectionChain {
        DetectionChain {
            detector_efficiency: self.detector_efficiency,
            transmittivity: [self.transmittivity_signal, self.transmittivity_idler],
            jitter_sigma: self.jitter_ps * 1e-12,
            dark_count_rate: self.dark_count_rate_hz,
            window: self.window_ns * 1e-9,
        }
    }
}

pub fn load_chain(path: Option<&Path>) -> Result<ChainConfig, CliError> {
    match path {
        None => Ok(ChainConfig::default()),
        Some(p) => parse(p, read_toml(p)?),
    }
}
