use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::io::{Channel, TagHeader, TimeTagRecord, TimeTagStream};
use super::model::{DetectionChain, PairStatistics, SourceModel};
use crate::error::Result;

/// Physical process that produced a tag.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Waveguide,
    Resonator,
    Noise,
    Dark,
}

const SHARD: u64 = 1 << 15;

struct Generator<'a> {
    source: &'a SourceModel,
    chain: &'a DetectionChain,
    eff: [f64; 2],
    mode_means: Vec<f64>,
    base: ChaCha8Rng,
}

fn poisson<R: Rng>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Poisson::new(mean).expect("positive mean").sample(rng) as u64
    }
}

fn thermal<R: Rng>(mean: f64, rng: &mut R) -> u64 {
    if mean <= 0.0 {
        0
    } else {
        Geometric::new(1.0 / (1.0 + mean)).expect("valid p").sample(rng)
    }
}

impl<'a> Generator<'a> {
    fn new(source: &'a SourceModel, chain: &'a DetectionChain, seed: u64) -> Result<Self> {
        source.validate()?;
        chain.validate()?;
        Ok(Self {
            source,
            chain,
            eff: chain.efficiencies(),
            mode_means: source.mode_means()?,
            base: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    fn detect(&self, rng: &mut ChaCha8Rng, pulse: u64, ch: Channel, t: f64, survive: f64, origin: Origin, out: &mut Vec<(TimeTagRecord, Origin)>) {
        if rng.random::<f64>() >= survive {
            return;
        }
        let jitter: f64 = if self.chain.jitter_sigma > 0.0 {
            self.chain.jitter_sigma * rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        };
        let t = t + jitter;
        if t < -0.5 * self.chain.window || t > self.chain.window {
            return;
        }
        out.push((
            TimeTagRecord {
                pulse_index: pulse,
                channel: ch,
                time_offset_ps: (t * 1e12).round() as i64,
            },
            origin,
        ));
    }

    fn pulse(&self, pulse: u64, out: &mut Vec<(TimeTagRecord, Origin)>) {
        let mut rng = self.base.clone();
        rng.set_stream(pulse);
        rng.set_word_pos(0);
        let start = out.len();
        let src = self.source;
        let [es, ei] = self.eff;

        for _ in 0..poisson(src.waveguide_pair_rate, &mut rng) {
            let u = rng.random::<f64>();
            let t = src.sample_pulse_time(u, rng.sample(StandardNormal));
            self.detect(&mut rng, pulse, Channel::Signal, t, es, Origin::Waveguide, out);
            self.detect(&mut rng, pulse, Channel::Idler, t, ei, Origin::Waveguide, out);
        }

        let pairs = match src.statistics {
            PairStatistics::Thermal => self.mode_means.iter().map(|&m| thermal(m, &mut rng)).sum(),
            PairStatistics::Poisson => poisson(src.resonator_mean_pairs, &mut rng),
            PairStatistics::Fixed(n) => n as u64,
        };
        let [xs, xi] = src.escape_efficiency;
        for _ in 0..pairs {
            let (ts, ti) = src.resonator_jti.sample(&mut rng);
            self.detect(&mut rng, pulse, Channel::Signal, ts, xs * es, Origin::Resonator, out);
            self.detect(&mut rng, pulse, Channel::Idler, ti, xi * ei, Origin::Resonator, out);
        }

        let (w0, w1) = src.noise_window;
        for (k, ch) in [Channel::Signal, Channel::Idler].into_iter().enumerate() {
            for _ in 0..thermal(src.noise_mean_photons[k], &mut rng) {
                let t = w0 + (w1 - w0) * rng.random::<f64>();
                self.detect(&mut rng, pulse, ch, t, self.eff[k], Origin::Noise, out);
            }
        }

        if self.chain.dark_count_rate > 0.0 {
            let span = 1.5 * self.chain.window;
            for ch in [Channel::Signal, Channel::Idler] {
                for _ in 0..poisson(self.chain.dark_count_rate * span, &mut rng) {
                    let t = -0.5 * self.chain.window + span * rng.random::<f64>();
                    self.detect(&mut rng, pulse, ch, t, 1.0, Origin::Dark, out);
                }
            }
        }
        out[start..].sort_by_key(|(r, _)| (r.time_offset_ps, r.channel as u8));
    }

    fn shard(&self, from: u64, to: u64) -> Vec<(TimeTagRecord, Origin)> {
        let mut out = Vec::new();
        for p in from..to {
            self.pulse(p, &mut out);
        }
        out
    }

    /// Shards of pulses in order; each shard is generated independently.
    fn batches(&self, n_pulses: u64) -> impl Iterator<Item = Vec<Vec<(TimeTagRecord, Origin)>>> + '_ {
        let per_batch = SHARD * 4 * rayon::current_num_threads() as u64;
        (0..n_pulses.div_ceil(per_batch)).map(move |b| {
            let lo = b * per_batch;
            let hi = (lo + per_batch).min(n_pulses);
            let shards: Vec<(u64, u64)> = (lo..hi)
                .step_by(SHARD as usize)
                .map(|s| (s, (s + SHARD).min(hi)))
                .collect();
            shards.into_par_iter().map(|(a, b)| self.shard(a, b)).collect()
        })
    }
}

fn header(source: &SourceModel, chain: &DetectionChain, n_pulses: u64, seed: u64) -> TagHeader {
    TagHeader {
        version: super::io::VERSION,
        repetition_rate: source.pump.repetition_rate,
        n_channels: 2,
        metadata: serde_json::json!({
            "n_pulses": n_pulses,
            "seed": seed,
            "resonator_mean_pairs": source.resonator_mean_pairs,
            "waveguide_pair_rate": source.waveguide_pair_rate,
            "noise_mean_photons": source.noise_mean_photons,
            "schmidt_k": source.schmidt_k,
            "escape_efficiency": source.escape_efficiency,
            "pulse_duration_s": source.pump.duration,
            "pulse_energy_j": source.pump.pulse_energy,
            "detector_efficiency": chain.detector_efficiency,
            "transmittivity": chain.transmittivity,
            "jitter_sigma_s": chain.jitter_sigma,
            "window_s": chain.window,
        }),
    }
}

/// Tags for `n_pulses` pulses together with the process behind each tag.
pub fn synthesize_labeled(
    source: &SourceModel,
    chain: &DetectionChain,
    n_pulses: u64,
    seed: u64,
) -> Result<(TimeTagStream, Vec<Origin>)> {
    let g = Generator::new(source, chain, seed)?;
    let mut records = Vec::new();
    let mut origins = Vec::new();
    for batch in g.batches(n_pulses) {
        for shard in batch {
            for (r, o) in shard {
                records.push(r);
                origins.push(o);
            }
        }
    }
    Ok((
        TimeTagStream {
            header: header(source, chain, n_pulses, seed),
            records,
        },
        origins,
    ))
}

pub fn synthesize_run(
    source: &SourceModel,
    chain: &DetectionChain,
    n_pulses: u64,
    seed: u64,
) -> Result<TimeTagStream> {
    synthesize_labeled(source, chain, n_pulses, seed).map(|(s, _)| s)
}

/// Generates and writes a run shard by shard; memory use is bounded by one
/// batch of shards. Returns the number of records written.
pub fn write_run<W: Write>(
    source: &SourceModel,
    chain: &DetectionChain,
    n_pulses: u64,
    seed: u64,
    w: W,
) -> Result<u64> {
    write_run_with_metadata(source, chain, n_pulses, seed, &serde_json::Map::new(), w)
}

/// [`write_run`] with extra header metadata entries.
pub fn write_run_with_metadata<W: Write>(
    source: &SourceModel,
    chain: &DetectionChain,
    n_pulses: u64,
    seed: u64,
    extra: &serde_json::Map<String, serde_json::Value>,
    mut w: W,
) -> Result<u64> {
    let g = Generator::new(source, chain, seed)?;
    let mut h = header(source, chain, n_pulses, seed);
    if let Some(m) = h.metadata.as_object_mut() {
        for (k, v) in extra {
            m.insert(k.clone(), v.clone());
        }
    }
    h.write_to(&mut w)?;
    let mut n = 0;
    for batch in g.batches(n_pulses) {
        for shard in batch {
            for (r, _) in shard {
                r.write_to(&mut w)?;
                n += 1;
            }
        }
    }
    w.flush()?;
    Ok(n)
}
