//! Coincidence analysis of time-tag streams: per-pulse 2D histograms of
//! (t_s, t_i), region post-selection, singles/coincidence rates and the
//! derived g₂, heralding efficiency and brightness.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::tags::{Channel, TagReader, TimeTagRecord, TimeTagStream};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramSpec {
    /// Lower edge of bin 0 on both axes (s).
    pub origin: f64,
    pub bin_width: f64,
    /// Bins per axis.
    pub n_bins: usize,
}

impl Default for HistogramSpec {
    fn default() -> Self {
        Self::covering(-120e-12, 60e-12, 20e-9)
    }
}

impl HistogramSpec {
    /// Bins from `origin` up to at least `end`.
    pub fn covering(origin: f64, bin_width: f64, end: f64) -> Self {
        Self {
            origin,
            bin_width,
            n_bins: ((end - origin) / bin_width).ceil().max(1.0) as usize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.bin_width > 0.0) || self.n_bins == 0 || !self.origin.is_finite() {
            return domain("histogram needs a positive bin width and at least one bin");
        }
        Ok(())
    }

    pub fn bin_of(&self, t: f64) -> Option<usize> {
        let x = ((t - self.origin) / self.bin_width).floor();
        if x >= 0.0 && x < self.n_bins as f64 {
            Some(x as usize)
        } else {
            None
        }
    }

    pub fn bin_center(&self, k: usize) -> f64 {
        self.origin + (k as f64 + 0.5) * self.bin_width
    }

    pub fn end(&self) -> f64 {
        self.origin + self.n_bins as f64 * self.bin_width
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionLabel {
    A,
    B,
    C,
    D,
}

/// Rectangular window `[ts.0, ts.1) × [ti.0, ti.1)`; bins belong to it when their centre does.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub label: RegionLabel,
    pub ts: (f64, f64),
    pub ti: (f64, f64),
}

impl RegionSpec {
    pub fn contains(&self, ts: f64, ti: f64) -> bool {
        ts >= self.ts.0 && ts < self.ts.1 && ti >= self.ti.0 && ti < self.ti.1
    }

    fn validate(&self) -> Result<()> {
        if !(self.ts.1 > self.ts.0) || !(self.ti.1 > self.ti.0) {
            return domain(format!("region {:?} has an empty interval", self.label));
        }
        Ok(())
    }
}

/// Region A holds waveguide pairs inside the pump window, D the delayed
/// resonator pairs, B and C the cross pairings of the two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionTaxonomy {
    pub a: RegionSpec,
    pub b: RegionSpec,
    pub c: RegionSpec,
    pub d: RegionSpec,
}

impl RegionTaxonomy {
    /// `A = [−m, T+m)²`, `D = [T+m, T+m+6τ)²`, `B = A_s × D_i`, `C = D_s × A_i`,
    /// where `m` pads the pump window against detector jitter.
    pub fn from_pulse(duration: f64, tau: f64, margin: f64) -> Self {
        let a = (-margin, duration + margin);
        let d = (duration + margin, duration + margin + 6.0 * tau);
        Self {
            a: RegionSpec { label: RegionLabel::A, ts: a, ti: a },
            b: RegionSpec { label: RegionLabel::B, ts: a, ti: d },
            c: RegionSpec { label: RegionLabel::C, ts: d, ti: a },
            d: RegionSpec { label: RegionLabel::D, ts: d, ti: d },
        }
    }

    /// Margin of three combined standard deviations of the timing jitter.
    pub fn jitter_margin(sigma: f64) -> f64 {
        3.0 * sigma
    }

    pub fn regions(&self) -> [RegionSpec; 4] {
        [self.a, self.b, self.c, self.d]
    }

    pub fn get(&self, label: RegionLabel) -> RegionSpec {
        match label {
            RegionLabel::A => self.a,
            RegionLabel::B => self.b,
            RegionLabel::C => self.c,
            RegionLabel::D => self.d,
        }
    }
}

/// Counts of signal×idler tag combinations per pulse, plus singles and
/// per-pulse multiplicities.
#[derive(Debug, Clone, PartialEq)]
pub struct CoincidenceHistogram {
    pub spec: HistogramSpec,
    /// `counts[(ts_bin, ti_bin)]`.
    pub counts: DMatrix<u64>,
    /// Combinations falling outside the binned span.
    pub overflow: u64,
    pub total_pulses: u64,
    pub singles: [u64; 2],
    /// `multiplicity[ch][m]`: pulses with exactly `m ≥ 1` tags in channel `ch`.
    pub multiplicity: [Vec<u64>; 2],
    /// Region applied by [`select_region`], if any.
    pub region: Option<RegionSpec>,
}

impl CoincidenceHistogram {
    pub fn new(spec: HistogramSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec,
            counts: DMatrix::zeros(spec.n_bins, spec.n_bins),
            overflow: 0,
            total_pulses: 0,
            singles: [0, 0],
            multiplicity: [Vec::new(), Vec::new()],
            region: None,
        })
    }

    /// Adds the tags of one pulse. Every signal tag is paired with every idler tag.
    pub fn add_pulse(&mut self, records: &[TimeTagRecord]) {
        let mut m = [0usize; 2];
        for r in records {
            m[r.channel.index()] += 1;
        }
        for ch in 0..2 {
            self.singles[ch] += m[ch] as u64;
            if m[ch] > 0 {
                let v = &mut self.multiplicity[ch];
                if v.len() <= m[ch] {
                    v.resize(m[ch] + 1, 0);
                }
                v[m[ch]] += 1;
            }
        }
        if m[0] == 0 || m[1] == 0 {
            return;
        }
        for s in records.iter().filter(|r| r.channel == Channel::Signal) {
            let bs = self.spec.bin_of(s.time());
            for i in records.iter().filter(|r| r.channel == Channel::Idler) {
                match (bs, self.spec.bin_of(i.time())) {
                    (Some(a), Some(b)) => self.counts[(a, b)] += 1,
                    _ => self.overflow += 1,
                }
            }
        }
    }

    /// Adds the bins, counters and multiplicities of a histogram built from a disjoint set of pulses.
    pub fn merge(&mut self, other: &CoincidenceHistogram) -> Result<()> {
        if self.spec != other.spec {
            return Err(Error::Domain("cannot merge histograms with different binning".into()));
        }
        self.counts += &other.counts;
        self.overflow += other.overflow;
        self.total_pulses += other.total_pulses;
        for ch in 0..2 {
            self.singles[ch] += other.singles[ch];
            let (a, b) = (&mut self.multiplicity[ch], &other.multiplicity[ch]);
            if a.len() < b.len() {
                a.resize(b.len(), 0);
            }
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    /// All binned and overflowing combinations.
    pub fn total_coincidences(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }

    pub fn region_total(&self, region: &RegionSpec) -> u64 {
        let mut n = 0;
        for a in 0..self.spec.n_bins {
            let ts = self.spec.bin_center(a);
            if ts < region.ts.0 || ts >= region.ts.1 {
                continue;
            }
            for b in 0..self.spec.n_bins {
                if region.contains(ts, self.spec.bin_center(b)) {
                    n += self.counts[(a, b)];
                }
            }
        }
        n
    }

    /// Bin index ranges covered by a region.
    pub fn region_bins(&self, region: &RegionSpec) -> (std::ops::Range<usize>, std::ops::Range<usize>) {
        let range = |(lo, hi): (f64, f64)| {
            let ks: Vec<usize> = (0..self.spec.n_bins)
                .filter(|&k| {
                    let c = self.spec.bin_center(k);
                    c >= lo && c < hi
                })
                .collect();
            match (ks.first(), ks.last()) {
                (Some(&a), Some(&b)) => a..b + 1,
                _ => 0..0,
            }
        };
        (range(region.ts), range(region.ti))
    }

    /// Counts restricted to the bins of the applied region (all bins if none).
    pub fn cropped(&self) -> DMatrix<u64> {
        match &self.region {
            None => self.counts.clone(),
            Some(r) => {
                let (rs, ri) = self.region_bins(r);
                self.counts.view((rs.start, ri.start), (rs.len(), ri.len())).into_owned()
            }
        }
    }

    /// `ts_bin,ti_bin,count` rows for non-empty bins.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "ts_bin,ti_bin,count")?;
        for a in 0..self.spec.n_bins {
            for b in 0..self.spec.n_bins {
                let c = self.counts[(a, b)];
                if c > 0 {
                    writeln!(w, "{a},{b},{c}")?;
                }
            }
        }
        Ok(())
    }

    /// Pulses with `m` tags in a channel, `m = 0, 1, ...`.
    pub fn multiplicity_distribution(&self, channel: Channel) -> Vec<u64> {
        let v = &self.multiplicity[channel.index()];
        let mut out = vec![0u64; v.len().max(1)];
        out[1..].copy_from_slice(&v[1.min(v.len())..]);
        out[0] = self.total_pulses - out[1..].iter().sum::<u64>();
        out
    }

    /// Sum over pulses of `m_s·m_i`, which equals [`Self::total_coincidences`].
    pub fn rates(&self, repetition_rate: f64) -> RateSummary {
        let n = self.total_pulses.max(1) as f64;
        let per = |c: u64| c as f64 / n * repetition_rate;
        let ps = self.singles[0] as f64 / n;
        let pi = self.singles[1] as f64 / n;
        RateSummary {
            r_s: per(self.singles[0]),
            r_i: per(self.singles[1]),
            r_si: per(self.total_coincidences()),
            accidental: ps * pi * repetition_rate,
            coincidences: self.total_coincidences(),
            singles: self.singles,
            pulses: self.total_pulses,
        }
    }
}

/// Histogram of a whole stream in one pass.
pub fn build_histogram<'a>(
    pulses: impl IntoIterator<Item = &'a [TimeTagRecord]>,
    n_pulses: u64,
    spec: HistogramSpec,
) -> Result<CoincidenceHistogram> {
    let mut h = CoincidenceHistogram::new(spec)?;
    for p in pulses {
        h.add_pulse(p);
    }
    h.total_pulses = n_pulses;
    Ok(h)
}

/// Histogram of a stream read from disk one pulse at a time.
pub fn build_histogram_streaming<R: Read>(reader: TagReader<R>, spec: HistogramSpec) -> Result<CoincidenceHistogram> {
    let declared = reader.header().n_pulses();
    let mut h = CoincidenceHistogram::new(spec)?;
    let mut last = None;
    for p in reader.pulses() {
        let (pulse, records) = p?;
        h.add_pulse(&records);
        last = Some(pulse);
    }
    h.total_pulses = declared.unwrap_or_else(|| last.map_or(0, |p| p + 1));
    Ok(h)
}

/// Histogram built from `shards` pulse-aligned partitions in parallel and merged in order.
pub fn build_histogram_sharded(
    stream: &TimeTagStream,
    spec: HistogramSpec,
    shards: usize,
) -> Result<CoincidenceHistogram> {
    let recs = &stream.records;
    let shards = shards.max(1);
    let mut bounds = vec![0usize];
    for k in 1..shards {
        let mut cut = recs.len() * k / shards;
        while cut > 0 && cut < recs.len() && recs[cut].pulse_index == recs[cut - 1].pulse_index {
            cut += 1;
        }
        bounds.push(cut.max(*bounds.last().expect("non-empty")));
    }
    bounds.push(recs.len());
    let parts: Vec<Result<CoincidenceHistogram>> = bounds
        .windows(2)
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|w| {
            let mut h = CoincidenceHistogram::new(spec)?;
            for p in recs[w[0]..w[1]].chunk_by(|a, b| a.pulse_index == b.pulse_index) {
                h.add_pulse(p);
            }
            Ok(h)
        })
        .collect();
    let mut total = CoincidenceHistogram::new(spec)?;
    for p in parts {
        total.merge(&p?)?;
    }
    total.total_pulses = stream.n_pulses();
    Ok(total)
}

/// Zeroes every bin whose centre lies outside `region`.
pub fn select_region(hist: &CoincidenceHistogram, region: &RegionSpec) -> Result<CoincidenceHistogram> {
    region.validate()?;
    let (lo, hi) = (hist.spec.origin, hist.spec.end());
    let inside = |(a, b): (f64, f64)| a >= lo - 1e-15 && b <= hi + 1e-15;
    if !inside(region.ts) || !inside(region.ti) {
        return Err(Error::Domain(format!(
            "region {:?} extends outside the histogram span [{lo:.3e}, {hi:.3e}) s",
            region.label
        )));
    }
    let mut out = hist.clone();
    for a in 0..hist.spec.n_bins {
        for b in 0..hist.spec.n_bins {
            if !region.contains(hist.spec.bin_center(a), hist.spec.bin_center(b)) {
                out.counts[(a, b)] = 0;
            }
        }
    }
    out.overflow = 0;
    out.region = Some(*region);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateSummary {
    /// Singles rates (Hz).
    pub r_s: f64,
    pub r_i: f64,
    /// Coincidence rate (Hz).
    pub r_si: f64,
    /// Rate expected from uncorrelated singles (Hz).
    pub accidental: f64,
    pub coincidences: u64,
    pub singles: [u64; 2],
    pub pulses: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
}

/// `η_HE = R_si / (R_s η_d T_i)`; the error assumes Poisson coincidence and singles counts.
pub fn heralding_efficiency(rates: &RateSummary, detector_efficiency: f64, t_i: f64) -> Result<Estimate> {
    if !(rates.r_s > 0.0) {
        return domain("signal singles rate is zero");
    }
    for (name, v) in [("detector efficiency", detector_efficiency), ("idler transmittivity", t_i)] {
        if !(v > 0.0 && v <= 1.0) {
            return domain(format!("{name} must lie in (0, 1]"));
        }
    }
    let value = rates.r_si / (rates.r_s * detector_efficiency * t_i);
    let rel = if rates.coincidences > 0 {
        (1.0 / rates.coincidences as f64 + 1.0 / rates.singles[0].max(1) as f64).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(Estimate {
        value,
        std_error: value * rel,
    })
}

/// Mean pairs per pulse from the loss-corrected coincidence rate.
pub fn mean_pairs_per_pulse(rates: &RateSummary, repetition_rate: f64, eta_s: f64, eta_i: f64) -> Result<Estimate> {
    if !(repetition_rate > 0.0) || !(eta_s > 0.0) || !(eta_i > 0.0) {
        return domain("repetition rate and efficiencies must be positive");
    }
    let value = rates.r_si / (repetition_rate * eta_s * eta_i);
    let std_error = value / (rates.coincidences.max(1) as f64).sqrt();
    Ok(Estimate { value, std_error })
}

/// `n̄ / E²` in pairs per pulse per pJ².
pub fn brightness(mean_pairs_per_pulse: f64, pulse_energy_pj: f64) -> Result<f64> {
    if !(pulse_energy_pj > 0.0) {
        return domain("pulse energy must be positive");
    }
    Ok(mean_pairs_per_pulse / (pulse_energy_pj * pulse_energy_pj))
}

/// `⟨m(m−1)⟩/⟨m⟩²` from the number of pulses with `m` tags.
pub fn g2_of_distribution(counts: &[u64]) -> Result<f64> {
    let n: u64 = counts.iter().sum();
    let (mut s1, mut s2) = (0.0, 0.0);
    for (m, &c) in counts.iter().enumerate() {
        let m = m as f64;
        s1 += m * c as f64;
        s2 += m * (m - 1.0) * c as f64;
    }
    if s1 == 0.0 || n == 0 {
        return domain("mean multiplicity is zero; g2 is undefined");
    }
    let n = n as f64;
    Ok((s2 / n) / (s1 / n).powi(2))
}

/// Unheralded g₂ of one channel with a pulse-level bootstrap error: resampling
/// pulses with replacement is a multinomial draw over multiplicity classes.
pub fn g2_with_bootstrap(counts: &[u64], n_bootstrap: usize, seed: u64) -> Result<Estimate> {
    let value = g2_of_distribution(counts)?;
    let n: u64 = counts.iter().sum();
    let reps: Vec<f64> = (0..n_bootstrap.max(2))
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut remaining = n;
            let mut mass = n;
            let mut sample = vec![0u64; counts.len()];
            for (k, &c) in counts.iter().enumerate() {
                if remaining == 0 || c == 0 {
                    continue;
                }
                let p = (c as f64 / mass as f64).min(1.0);
                let d = Binomial::new(remaining, p).expect("valid binomial").sample(&mut rng);
                sample[k] = d;
                remaining -= d;
                mass -= c;
            }
            g2_of_distribution(&sample).unwrap_or(f64::NAN)
        })
        .collect();
    let k = reps.len() as f64;
    let mean = reps.iter().sum::<f64>() / k;
    let var = reps.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1.0);
    Ok(Estimate {
        value,
        std_error: var.sqrt(),
    })
}

pub fn estimate_g2_unheralded(
    stream: &TimeTagStream,
    channel: Channel,
    n_bootstrap: usize,
    seed: u64,
) -> Result<Estimate> {
    let h = build_histogram(stream.pulses(), stream.n_pulses(), HistogramSpec {
        origin: 0.0,
        bin_width: 1.0,
        n_bins: 1,
    })?;
    g2_with_bootstrap(&h.multiplicity_distribution(channel), n_bootstrap, seed)
}
