use serde::{Deserialize, Serialize};

use super::sampler::JtiSampler;
use crate::biphoton::{JointGrid, PulseShape, PumpPulse};
use crate::error::{domain, Result};

/// Photon-number statistics of resonator pairs per pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PairStatistics {
    /// Independent thermal statistics in each Schmidt mode.
    #[default]
    Thermal,
    Poisson,
    /// Exactly this many pairs in every pulse.
    Fixed(u32),
}

/// Schmidt weights over `⌈K⌉` modes whose purity `Σλ²` equals `1/K`: one
/// dominant mode and the remainder split evenly.
pub fn thermal_mode_weights(k: f64) -> Result<Vec<f64>> {
    if !(k >= 1.0) || !k.is_finite() {
        return domain("Schmidt number must be finite and at least 1");
    }
    let m = k.ceil() as usize;
    if m <= 1 || k - 1.0 < 1e-12 {
        return Ok(vec![1.0]);
    }
    let r = (m - 1) as f64;
    // x² + (1 − x)²/r = 1/K, taking the larger root.
    let a = 1.0 + 1.0 / r;
    let b = -2.0 / r;
    let c = 1.0 / r - 1.0 / k;
    let x = (-b + (b * b - 4.0 * a * c).max(0.0).sqrt()) / (2.0 * a);
    let mut w = vec![(1.0 - x) / r; m];
    w[0] = x;
    Ok(w)
}

#[derive(Debug, Clone)]
pub struct SourceModel {
    pub resonator_jti: JtiSampler,
    /// Mean waveguide-generated pairs per pulse.
    pub waveguide_pair_rate: f64,
    /// Mean resonator pairs per pulse, ⟨n₁⟩.
    pub resonator_mean_pairs: f64,
    /// Mean noise photons per pulse in the signal and idler arms, ⟨n₂⟩.
    pub noise_mean_photons: [f64; 2],
    pub pump: PumpPulse,
    pub schmidt_k: f64,
    /// Probability that a resonator photon leaves through the bus rather than
    /// being lost inside the ring, per arm.
    pub escape_efficiency: [f64; 2],
    pub statistics: PairStatistics,
    /// Interval over which noise photons are emitted uniformly (s).
    pub noise_window: (f64, f64),
}

impl SourceModel {
    /// Resonator-only source with unit escape efficiency and no noise.
    pub fn new(jti: &JointGrid, pump: PumpPulse) -> Result<Self> {
        let sampler = JtiSampler::from_grid(jti)?;
        let noise_window = (0.0, sampler.axis_s.end());
        Ok(Self {
            resonator_jti: sampler,
            waveguide_pair_rate: 0.0,
            resonator_mean_pairs: 0.0,
            noise_mean_photons: [0.0, 0.0],
            pump,
            schmidt_k: 1.0,
            escape_efficiency: [1.0, 1.0],
            statistics: PairStatistics::Thermal,
            noise_window,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.pump.validate()?;
        let means = [
            self.waveguide_pair_rate,
            self.resonator_mean_pairs,
            self.noise_mean_photons[0],
            self.noise_mean_photons[1],
        ];
        if means.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
            return domain("mean photon numbers must be finite and non-negative");
        }
        if self.escape_efficiency.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return domain("escape efficiencies must lie in [0, 1]");
        }
        if !(self.noise_window.1 >= self.noise_window.0) {
            return domain("noise window is reversed");
        }
        thermal_mode_weights(self.schmidt_k)?;
        Ok(())
    }

    /// Mean resonator pairs per Schmidt mode.
    pub fn mode_means(&self) -> Result<Vec<f64>> {
        Ok(thermal_mode_weights(self.schmidt_k)?
            .into_iter()
            .map(|w| w * self.resonator_mean_pairs)
            .collect())
    }

    /// Expected value of the loss-corrected heralding estimator
    /// `R_si/(R_s η_i) = E[X_s X_i]/E[X_s]`, with `X` the photons leaving the
    /// chip per pulse in each arm.
    pub fn expected_heralding_efficiency(&self) -> Result<f64> {
        let n1 = self.resonator_mean_pairs;
        let [es, ei] = self.escape_efficiency;
        let [ns, ni] = self.noise_mean_photons;
        let purity: f64 = thermal_mode_weights(self.schmidt_k)?.iter().map(|w| w * w).sum();
        let second_moment = match self.statistics {
            PairStatistics::Thermal => n1 + n1 * n1 * (1.0 + purity),
            PairStatistics::Poisson => n1 + n1 * n1,
            PairStatistics::Fixed(m) => (m as f64).powi(2),
        };
        let mean = match self.statistics {
            PairStatistics::Fixed(m) => m as f64,
            _ => n1,
        };
        let wg = self.waveguide_pair_rate;
        let cross = es * ei * second_moment + es * mean * ni + ns * ei * mean + ns * ni + wg + wg * wg
            + wg * (es * mean + ns + ei * mean + ni);
        let singles = es * mean + ns + wg;
        if singles == 0.0 {
            return domain("source emits no signal photons");
        }
        Ok(cross / singles)
    }

    /// Sets both escape efficiencies to the common value that makes
    /// [`Self::expected_heralding_efficiency`] equal `target`.
    pub fn calibrate_escape_for_heralding(&mut self, target: f64) -> Result<f64> {
        let eval = |m: &mut Self, e: f64| {
            m.escape_efficiency = [e, e];
            m.expected_heralding_efficiency()
        };
        let (mut lo, mut hi) = (0.0, 1.0);
        // no pair photon escapes at zero efficiency
        let f_lo = -target;
        let f_hi = eval(self, hi)? - target;
        if f_lo * f_hi > 0.0 {
            return domain(format!("heralding efficiency {target} is out of reach for this source"));
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if (eval(self, mid)? - target) * f_lo > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let e = 0.5 * (lo + hi);
        self.escape_efficiency = [e, e];
        Ok(e)
    }

    pub(crate) fn sample_pulse_time(&self, u: f64, normal: f64) -> f64 {
        match self.pump.shape {
            PulseShape::Rectangular => u * self.pump.duration,
            PulseShape::Gaussian => 0.5 * self.pump.duration + self.pump.sigma_t() * normal,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionChain {
    pub detector_efficiency: f64,
    /// Path transmittivity of the signal and idler arms.
    pub transmittivity: [f64; 2],
    /// Per-channel gaussian timing jitter, RMS (s).
    pub jitter_sigma: f64,
    pub dark_count_rate: f64,
    /// Per-pulse acquisition window: tags are kept in `[−window/2, window]` (s).
    pub window: f64,
}

impl Default for DetectionChain {
    fn default() -> Self {
        Self {
            detector_efficiency: 0.85,
            transmittivity: [1.0, 1.0],
            jitter_sigma: 35e-12,
            dark_count_rate: 0.0,
            window: 20e-9,
        }
    }
}

impl DetectionChain {
    pub fn ideal() -> Self {
        Self {
            detector_efficiency: 1.0,
            jitter_sigma: 0.0,
            ..Self::default()
        }
    }

    pub fn efficiencies(&self) -> [f64; 2] {
        [
            self.detector_efficiency * self.transmittivity[0],
            self.detector_efficiency * self.transmittivity[1],
        ]
    }

    pub fn validate(&self) -> Result<()> {
        let effs = [self.detector_efficiency, self.transmittivity[0], self.transmittivity[1]];
        if effs.iter().any(|e| !(0.0..=1.0).contains(e)) {
            return domain("efficiencies must lie in [0, 1]");
        }
        if !(self.jitter_sigma >= 0.0) || !(self.dark_count_rate >= 0.0) || !(self.window > 0.0) {
            return domain("jitter, dark-count rate and window must be non-negative");
        }
        Ok(())
    }
}
