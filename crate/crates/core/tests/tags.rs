use std::io::Cursor;

use nalgebra::DMatrix;
use num_complex::Complex64;
use pairsim::axis::UniformAxis;
use pairsim::biphoton::{jti, Domain, JointGrid, PumpPulse, QConfig, TemporalOptions};
use pairsim::tags::*;
use pairsim::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const PS: f64 = 1e-12;

fn temporal_grid(amp: DMatrix<f64>, step: f64) -> JointGrid {
    let (r, c) = amp.shape();
    let mut g = JointGrid {
        axis_s: UniformAxis { start: 0.0, step, len: r },
        axis_i: UniformAxis { start: 0.0, step, len: c },
        values: amp.map(|v| Complex64::new(v, 0.0)),
        domain: Domain::Temporal,
        carrier: [0.0, 0.0],
        conjugate_start: None,
    };
    g.normalize().unwrap();
    g
}

fn density(grid: &JointGrid) -> DMatrix<f64> {
    grid.intensity()
}

fn pump() -> PumpPulse {
    PumpPulse::rectangular(300.0 * PS, 1.22e15)
}

/// Single occupied cell at (1 ns, 1 ns).
fn delta_grid() -> JointGrid {
    let mut a = DMatrix::zeros(30, 30);
    a[(20, 20)] = 1.0;
    temporal_grid(a, 50.0 * PS)
}

fn fixed_source(grid: &JointGrid) -> SourceModel {
    let mut s = SourceModel::new(grid, pump()).unwrap();
    s.statistics = PairStatistics::Fixed(1);
    s.resonator_mean_pairs = 1.0;
    s
}

fn lossless() -> DetectionChain {
    DetectionChain {
        jitter_sigma: 0.0,
        ..DetectionChain::ideal()
    }
}

#[test]
fn sampler_matches_cell_probabilities() {
    let a = DMatrix::from_fn(8, 8, |r, c| 1.0 + ((r * 3 + c * 5) % 7) as f64);
    let grid = temporal_grid(a, 100.0 * PS);
    let sampler = JtiSampler::from_grid(&grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let n = 1_000_000;
    let mut counts = DMatrix::<f64>::zeros(8, 8);
    for _ in 0..n {
        let (ts, ti) = sampler.sample(&mut rng);
        let r = ((ts + 50.0 * PS) / (100.0 * PS)).floor() as usize;
        let c = ((ti + 50.0 * PS) / (100.0 * PS)).floor() as usize;
        counts[(r, c)] += 1.0;
    }
    let mut chi2 = 0.0;
    for r in 0..8 {
        for c in 0..8 {
            let e = sampler.cell_probability(r, c) * n as f64;
            chi2 += (counts[(r, c)] - e).powi(2) / e;
        }
    }
    // 63 degrees of freedom; five standard deviations above the mean.
    assert!(chi2 < 63.0 + 5.0 * (126.0f64).sqrt(), "chi2 = {chi2}");
}

#[test]
fn delta_intensity_samples_one_cell() {
    let sampler = JtiSampler::from_grid(&delta_grid()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..10_000 {
        let (ts, ti) = sampler.sample(&mut rng);
        assert!((ts - 1e-9).abs() <= 25.0 * PS + 1e-18);
        assert!((ti - 1e-9).abs() <= 25.0 * PS + 1e-18);
    }
}

#[test]
fn sampler_rejects_unnormalized_or_spectral_input() {
    let axis = UniformAxis { start: 0.0, step: 1.0, len: 2 };
    let m = DMatrix::from_element(2, 2, 1.0);
    assert!(matches!(JtiSampler::new(&m, axis, axis), Err(Error::Domain(_))));
    let mut g = delta_grid();
    g.domain = Domain::Spectral;
    assert!(matches!(JtiSampler::from_grid(&g), Err(Error::Domain(_))));
}

fn pearson(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx).powi(2);
        syy += (y - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

/// Correlation of the piecewise-uniform density defined by a gridded intensity.
fn grid_correlation(p: &DMatrix<f64>, axis_s: &UniformAxis, axis_i: &UniformAxis) -> f64 {
    let total = p.sum();
    let (mut ms, mut mi, mut ss, mut si, mut sc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for r in 0..p.nrows() {
        for c in 0..p.ncols() {
            let w = p[(r, c)] / total;
            let (x, y) = (axis_s.value(r), axis_i.value(c));
            ms += w * x;
            mi += w * y;
            ss += w * x * x;
            si += w * y * y;
            sc += w * x * y;
        }
    }
    let vs = ss - ms * ms + axis_s.step.powi(2) / 12.0;
    let vi = si - mi * mi + axis_i.step.powi(2) / 12.0;
    (sc - ms * mi) / (vs * vi).sqrt()
}

#[test]
fn separable_intensity_gives_uncorrelated_times() {
    let a = DMatrix::from_fn(40, 40, |r, c| (-(r as f64) / 8.0).exp() * (-(c as f64 - 12.0).powi(2) / 50.0).exp());
    let grid = temporal_grid(a, 50.0 * PS);
    let sampler = JtiSampler::from_grid(&grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (xs, ys): (Vec<f64>, Vec<f64>) = (0..200_000).map(|_| sampler.sample(&mut rng)).unzip();
    assert!(pearson(&xs, &ys).abs() < 0.01);
}

#[test]
fn sampled_correlation_matches_simulated_intensity() {
    let grid = QConfig::HighPumpQ.preset().jta(&TemporalOptions::default()).unwrap();
    let p = jti(&grid).unwrap();
    let oracle = grid_correlation(&p, &grid.axis_s, &grid.axis_i);
    let sampler = JtiSampler::from_grid(&grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (xs, ys): (Vec<f64>, Vec<f64>) = (0..1_000_000).map(|_| sampler.sample(&mut rng)).unzip();
    let got = pearson(&xs, &ys);
    assert!((got - oracle).abs() < 0.01, "{got} vs {oracle}");
    assert!(oracle > 0.1, "config 2 should be visibly correlated: {oracle}");
}

#[test]
fn signal_marginal_passes_ks() {
    let grid = QConfig::EqualQ.preset().jta(&TemporalOptions::default()).unwrap();
    let p = density(&grid);
    let row: Vec<f64> = (0..p.nrows()).map(|r| p.row(r).sum()).collect();
    let total: f64 = row.iter().sum();
    let s = grid.axis_s;
    // Piecewise-linear CDF of the cell-uniform marginal.
    let cdf = |t: f64| -> f64 {
        let x = (t - s.start) / s.step + 0.5;
        let k = x.floor().clamp(0.0, row.len() as f64) as usize;
        let below: f64 = row[..k.min(row.len())].iter().sum();
        let frac = if k < row.len() { (x - k as f64) * row[k] } else { 0.0 };
        ((below + frac) / total).clamp(0.0, 1.0)
    };
    let sampler = JtiSampler::from_grid(&grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut xs: Vec<f64> = (0..100_000).map(|_| sampler.sample(&mut rng).0).collect();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = cdf(x);
            (f - k as f64 / n).abs().max((f - (k + 1) as f64 / n).abs())
        })
        .fold(0.0, f64::max);
    assert!(d < 0.01, "KS distance {d}");
}

#[test]
fn generation_is_deterministic_and_thread_invariant() {
    let grid = QConfig::LowPumpQ.preset().jta(&TemporalOptions::default()).unwrap();
    let mut src = SourceModel::new(&grid, pump()).unwrap();
    src.resonator_mean_pairs = 0.1;
    src.noise_mean_photons = [0.02, 0.03];
    src.waveguide_pair_rate = 0.01;
    let mut chain = DetectionChain::default();
    chain.dark_count_rate = 1e5;
    let n = 100_000;

    let bytes = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let mut buf = Vec::new();
            write_run(&src, &chain, n, 42, &mut buf).unwrap();
            buf
        })
    };
    let one = bytes(1);
    assert_eq!(one, bytes(1));
    assert_eq!(one, bytes(3));

    let mut via_stream = Vec::new();
    write_stream(&synthesize_run(&src, &chain, n, 42).unwrap(), &mut via_stream).unwrap();
    assert_eq!(one, via_stream);

    let mut other = Vec::new();
    write_run(&src, &chain, n, 43, &mut other).unwrap();
    assert_ne!(one, other);
}

#[test]
fn pulses_do_not_depend_on_run_length() {
    let src = fixed_source(&delta_grid());
    let chain = DetectionChain::default();
    let short = synthesize_run(&src, &chain, 1000, 9).unwrap();
    let long = synthesize_run(&src, &chain, 70_000, 9).unwrap();
    let prefix: Vec<_> = long.records.iter().take_while(|r| r.pulse_index < 1000).copied().collect();
    assert_eq!(short.records, prefix);
}

#[test]
fn lossless_single_pairs_give_one_tag_per_channel() {
    let src = fixed_source(&delta_grid());
    let stream = synthesize_run(&src, &lossless(), 20_000, 1).unwrap();
    let mut pulses = 0;
    for p in stream.pulses() {
        assert_eq!(p.len(), 2);
        assert_eq!(p.iter().filter(|r| r.channel == Channel::Signal).count(), 1);
        pulses += 1;
    }
    assert_eq!(pulses, 20_000);
    assert!(stream.records.iter().all(|r| (r.time_offset_ps - 1000).abs() <= 25));
}

#[test]
fn detection_thins_binomially() {
    let src = fixed_source(&delta_grid());
    let chain = DetectionChain {
        detector_efficiency: 0.85,
        transmittivity: [0.5, 0.2],
        ..lossless()
    };
    let n = 200_000u64;
    let stream = synthesize_run(&src, &chain, n, 2).unwrap();
    for (ch, p) in [(Channel::Signal, 0.425), (Channel::Idler, 0.17)] {
        let k = stream.records.iter().filter(|r| r.channel == ch).count() as f64;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((k - n as f64 * p).abs() < 4.0 * sd, "{ch:?}: {k}");
    }
}

#[test]
fn jitter_broadens_time_difference_by_root_two() {
    let src = fixed_source(&delta_grid());
    let sigma = 35.0 * PS;
    let chain = DetectionChain {
        jitter_sigma: sigma,
        ..lossless()
    };
    let stream = synthesize_run(&src, &chain, 100_000, 3).unwrap();
    let mut diffs = Vec::new();
    for p in stream.pulses() {
        let s = p.iter().find(|r| r.channel == Channel::Signal).unwrap();
        let i = p.iter().find(|r| r.channel == Channel::Idler).unwrap();
        diffs.push(s.time() - i.time());
    }
    let n = diffs.len() as f64;
    let m = diffs.iter().sum::<f64>() / n;
    let sd = (diffs.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    // Cell dither adds the variance of the difference of two uniforms.
    let expected = (2.0 * sigma * sigma + 2.0 * (50.0 * PS).powi(2) / 12.0).sqrt();
    assert!((sd / expected - 1.0).abs() < 0.03, "{sd} vs {expected}");
}

#[test]
fn tags_outside_the_window_are_dropped() {
    let src = fixed_source(&delta_grid());
    let chain = DetectionChain {
        window: 0.5e-9,
        ..lossless()
    };
    let stream = synthesize_run(&src, &chain, 1000, 4).unwrap();
    assert!(stream.records.is_empty());
    assert_eq!(stream.n_pulses(), 1000);
}

#[test]
fn labels_follow_the_emitting_process() {
    let mut src = SourceModel::new(&delta_grid(), pump()).unwrap();
    src.waveguide_pair_rate = 0.2;
    let stream = synthesize_labeled(&src, &lossless(), 5000, 5).unwrap();
    assert!(!stream.1.is_empty());
    for (r, o) in stream.0.records.iter().zip(&stream.1) {
        assert_eq!(*o, Origin::Waveguide);
        assert!(r.time() >= 0.0 && r.time() <= 300.0 * PS);
    }
}

#[test]
fn ttag_round_trip() {
    let src = fixed_source(&delta_grid());
    let stream = synthesize_run(&src, &DetectionChain::default(), 5000, 6).unwrap();
    let mut buf = Vec::new();
    write_stream(&stream, &mut buf).unwrap();
    let back = read_stream(Cursor::new(&buf)).unwrap();
    assert_eq!(back.records, stream.records);
    assert_eq!(back.header, stream.header);
    assert_eq!(back.n_pulses(), 5000);

    let grouped: Vec<(u64, Vec<TimeTagRecord>)> =
        TagReader::new(Cursor::new(&buf)).unwrap().pulses().collect::<Result<_, _>>().unwrap();
    let direct: Vec<&[TimeTagRecord]> = stream.pulses().collect();
    assert_eq!(grouped.len(), direct.len());
    for ((p, g), d) in grouped.iter().zip(direct) {
        assert_eq!(g.as_slice(), d);
        assert!(d.iter().all(|r| r.pulse_index == *p));
    }
}

fn small_stream_bytes() -> Vec<u8> {
    let src = fixed_source(&delta_grid());
    let stream = synthesize_run(&src, &lossless(), 10, 7).unwrap();
    let mut buf = Vec::new();
    write_stream(&stream, &mut buf).unwrap();
    buf
}

#[test]
fn ttag_errors() {
    let buf = small_stream_bytes();

    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(read_stream(Cursor::new(&bad)), Err(Error::Format(_))));

    let mut bad = buf.clone();
    bad[4] = 9;
    assert!(matches!(read_stream(Cursor::new(&bad)), Err(Error::Format(_))));

    assert!(matches!(read_stream(Cursor::new(&buf[..3])), Err(Error::Truncated(_))));
    let cut = &buf[..buf.len() - 5];
    assert!(matches!(read_stream(Cursor::new(cut)), Err(Error::Truncated(_))));

    let rec = 17;
    let n = buf.len();
    let mut bad = buf.clone();
    bad[n - rec + 8] = 7;
    assert!(matches!(read_stream(Cursor::new(&bad)), Err(Error::Format(_))));

    // Last record moved back to pulse 0.
    let mut bad = buf.clone();
    bad[n - rec..n - rec + 8].copy_from_slice(&0u64.to_le_bytes());
    match read_stream(Cursor::new(&bad)) {
        Err(Error::Ordering { index, pulse, previous }) => {
            assert_eq!(index, 19);
            assert_eq!(pulse, 0);
            assert_eq!(previous, 9);
        }
        other => panic!("expected ordering error, got {other:?}"),
    }
}

#[test]
fn mode_weights_have_purity_one_over_k() {
    assert_eq!(thermal_mode_weights(1.0).unwrap(), vec![1.0]);
    for k in [1.013, 1.2, 2.0, 3.7, 10.0] {
        let w = thermal_mode_weights(k).unwrap();
        assert_eq!(w.len(), (k as f64).ceil() as usize);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let purity: f64 = w.iter().map(|x| x * x).sum();
        assert!((purity - 1.0 / k).abs() < 1e-12, "K = {k}");
        assert!(w.iter().all(|x| *x >= 0.0));
    }
    assert!(matches!(thermal_mode_weights(0.5), Err(Error::Domain(_))));
}

#[test]
fn expected_heralding_matches_simple_cases() {
    let mut src = fixed_source(&delta_grid());
    src.escape_efficiency = [0.4, 0.3];
    assert!((src.expected_heralding_efficiency().unwrap() - 0.3).abs() < 1e-12);

    src.statistics = PairStatistics::Poisson;
    src.resonator_mean_pairs = 0.05;
    // E[XsXi]/E[Xs] = ei(1 + n) for Poisson pairs.
    assert!((src.expected_heralding_efficiency().unwrap() - 0.3 * 1.05).abs() < 1e-12);

    src.statistics = PairStatistics::Thermal;
    src.resonator_mean_pairs = 0.21;
    src.noise_mean_photons = [0.042, 0.048];
    src.schmidt_k = 1.0 / 0.987;
    let e = src.calibrate_escape_for_heralding(0.23).unwrap();
    assert!(e > 0.0 && e < 1.0);
    assert!((src.expected_heralding_efficiency().unwrap() - 0.23).abs() < 1e-9);
    assert!(matches!(src.calibrate_escape_for_heralding(5.0), Err(Error::Domain(_))));
}

#[test]
fn thermal_pairs_have_bose_statistics() {
    let mut src = SourceModel::new(&delta_grid(), pump()).unwrap();
    src.resonator_mean_pairs = 0.3;
    let n = 400_000u64;
    let stream = synthesize_run(&src, &lossless(), n, 8).unwrap();
    let mut m1 = 0.0;
    let mut m2 = 0.0;
    for p in stream.pulses() {
        let k = p.iter().filter(|r| r.channel == Channel::Signal).count() as f64;
        m1 += k;
        m2 += k * (k - 1.0);
    }
    let mean = m1 / n as f64;
    let g2 = (m2 / n as f64) / (mean * mean);
    assert!((mean - 0.3).abs() < 0.01, "{mean}");
    assert!((g2 - 2.0).abs() < 0.05, "{g2}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn records_are_ordered_and_inside_the_window(seed in any::<u64>(), wg in 0.0f64..0.5, noise in 0.0f64..0.3) {
        let grid = temporal_grid(DMatrix::from_fn(20, 20, |r, c| 1.0 + (r + c) as f64), 200.0 * PS);
        let mut src = SourceModel::new(&grid, pump()).unwrap();
        src.waveguide_pair_rate = wg;
        src.resonator_mean_pairs = 0.2;
        src.noise_mean_photons = [noise, noise];
        let mut chain = DetectionChain::default();
        chain.dark_count_rate = 1e6;
        chain.window = 3e-9;
        let s = synthesize_run(&src, &chain, 2000, seed).unwrap();
        for w in s.records.windows(2) {
            prop_assert!(w[0].pulse_index <= w[1].pulse_index);
            if w[0].pulse_index == w[1].pulse_index {
                prop_assert!(w[0].time_offset_ps <= w[1].time_offset_ps);
            }
        }
        for r in &s.records {
            prop_assert!(r.pulse_index < 2000);
            prop_assert!(r.time() >= -1.5e-9 - 1e-12 && r.time() <= 3e-9 + 1e-12);
        }
    }
}
