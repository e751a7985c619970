//! Python bindings for `pairsim`.
//!
//! Matrices cross the boundary as nested lists, results as dicts.

use std::fs::File;
use std::io::{BufReader, BufWriter};

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use pairsim::biphoton::{jsa_to_jta, jti, JointGrid, JsaOptions, QConfig, SourcePreset, TemporalOptions};
use pairsim::coincidence::{
    build_histogram_streaming, g2_with_bootstrap, heralding_efficiency, HistogramSpec, RegionLabel, RegionTaxonomy,
};
use pairsim::device::{photon_lifetime, DeviceParams, Role};
use pairsim::schmidt::{purity_upper_bound_from_jti, schmidt_decompose, statistical_error};
use pairsim::stats::{self, ClickModel, PowerPoint};
use pairsim::tags::{write_run, Channel, DetectionChain, PairStatistics, SourceModel, TagReader};
use pairsim::units::omega_from_wavelength;

fn err(e: pairsim::Error) -> PyErr {
    match e {
        pairsim::Error::Io(io) => PyIOError::new_err(io.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn io_err(e: std::io::Error) -> PyErr {
    PyIOError::new_err(e.to_string())
}

fn click_model(name: &str) -> PyResult<ClickModel> {
    match name {
        "threshold" => Ok(ClickModel::Threshold),
        "literal" => Ok(ClickModel::Literal),
        _ => Err(PyValueError::new_err(format!("unknown click model `{name}`"))),
    }
}

/// Microring device with the interferometric coupler.
#[pyclass(name = "Device", module = "pairsim_py", skip_from_py_object)]
#[derive(Clone)]
struct PyDevice {
    inner: DeviceParams,
}

#[pymethods]
impl PyDevice {
    #[new]
    fn new() -> Self {
        Self {
            inner: DeviceParams::default(),
        }
    }

    #[getter]
    fn main_fsr_hz(&self) -> f64 {
        self.inner.main_fsr_hz()
    }

    #[getter]
    fn aux_fsr_hz(&self) -> f64 {
        self.inner.aux_fsr_hz()
    }

    fn aux_dip_extinction_db(&self, wavelength_nm: f64) -> PyResult<f64> {
        self.inner
            .aux_dip_extinction_db(omega_from_wavelength(wavelength_nm * 1e-9))
            .map_err(err)
    }

    /// Loaded and intrinsic Q, lifetime (s) and escape efficiency of the main
    /// resonance nearest `wavelength_nm`.
    fn resonance<'py>(&self, py: Python<'py>, wavelength_nm: f64) -> PyResult<Bound<'py, PyDict>> {
        let r = self
            .inner
            .resonance_near(omega_from_wavelength(wavelength_nm * 1e-9), Role::Pump)
            .map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("loaded_q", r.loaded_q)?;
        d.set_item("intrinsic_q", r.intrinsic_q)?;
        d.set_item("lifetime_s", r.lifetime())?;
        d.set_item("escape_efficiency", r.escape_efficiency())?;
        Ok(d)
    }

    /// Sets the MZI phase so the pump resonance has the given loaded Q.
    fn calibrate_for_q(&mut self, wavelength_nm: f64, loaded_q: f64) -> PyResult<()> {
        self.inner
            .calibrate_mzi_for_q(omega_from_wavelength(wavelength_nm * 1e-9), loaded_q)
            .map_err(err)
    }
}

/// Pump/signal/idler resonance triplet and pump pulse.
#[pyclass(name = "Source", module = "pairsim_py", skip_from_py_object)]
#[derive(Clone)]
struct PySource {
    inner: SourcePreset,
}

#[pymethods]
impl PySource {
    /// `preset` is `equal-q`, `high-pump-q` or `low-pump-q`; `q` gives
    /// explicit pump, signal and idler loaded Q values instead.
    #[new]
    #[pyo3(signature = (preset=None, q=None, pulse_duration_ps=300.0))]
    fn new(preset: Option<&str>, q: Option<[f64; 3]>, pulse_duration_ps: f64) -> PyResult<Self> {
        let mut inner = match (preset, q) {
            (Some(name), None) => QConfig::ALL
                .into_iter()
                .find(|c| c.name() == name)
                .ok_or_else(|| PyValueError::new_err(format!("unknown preset `{name}`")))?
                .preset(),
            (None, Some(q)) => SourcePreset::new(q),
            _ => return Err(PyValueError::new_err("give exactly one of preset or q")),
        };
        inner.pulse_duration = pulse_duration_ps * 1e-12;
        Ok(Self { inner })
    }

    #[getter]
    fn q(&self) -> [f64; 3] {
        self.inner.q
    }

    /// Photon lifetimes of pump, signal and idler (s).
    #[getter]
    fn lifetimes(&self) -> PyResult<[f64; 3]> {
        Ok(self.inner.resonances().map_err(err)?.map(|r| r.lifetime()))
    }

    /// Joint temporal amplitude from the time-domain solver.
    #[pyo3(signature = (points=512))]
    fn jta(&self, points: usize) -> PyResult<PyJta> {
        let opts = TemporalOptions {
            points,
            ..TemporalOptions::default()
        };
        Ok(PyJta {
            inner: self.inner.jta(&opts).map_err(err)?,
        })
    }

    /// Joint temporal amplitude via the spectral amplitude and a 2-D transform.
    #[pyo3(signature = (points=1024))]
    fn jta_from_spectrum(&self, points: usize) -> PyResult<PyJta> {
        let opts = JsaOptions {
            points,
            ..JsaOptions::default()
        };
        let jsa = self.inner.jsa(&opts).map_err(err)?;
        Ok(PyJta {
            inner: jsa_to_jta(&jsa).map_err(err)?,
        })
    }
}

/// Gridded joint amplitude.
#[pyclass(name = "JointAmplitude", module = "pairsim_py", skip_from_py_object)]
#[derive(Clone)]
struct PyJta {
    inner: JointGrid,
}

#[pymethods]
impl PyJta {
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let f = File::open(path).map_err(io_err)?;
        Ok(Self {
            inner: JointGrid::read_from(BufReader::new(f)).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let f = File::create(path).map_err(io_err)?;
        self.inner.write_to(BufWriter::new(f)).map_err(err)
    }

    #[getter]
    fn shape(&self) -> (usize, usize) {
        self.inner.values.shape()
    }

    /// Grid spacing along the signal and idler axes.
    #[getter]
    fn step(&self) -> (f64, f64) {
        (self.inner.axis_s.step, self.inner.axis_i.step)
    }

    fn purity(&self) -> PyResult<f64> {
        Ok(schmidt_decompose(&self.inner).map_err(err)?.purity)
    }

    fn schmidt_number(&self) -> PyResult<f64> {
        Ok(schmidt_decompose(&self.inner).map_err(err)?.schmidt_number)
    }

    /// Normalized Schmidt coefficients, largest first.
    #[pyo3(signature = (limit=20))]
    fn schmidt_coefficients(&self, limit: usize) -> PyResult<Vec<f64>> {
        let s = schmidt_decompose(&self.inner).map_err(err)?;
        Ok(s.coefficients.into_iter().take(limit).collect())
    }

    /// Purity of the square root of the intensity (phase discarded).
    fn sqrt_intensity_purity(&self) -> PyResult<f64> {
        let i = jti(&self.inner).map_err(err)?;
        Ok(purity_upper_bound_from_jti(&i).map_err(err)?.purity)
    }

    /// Intensity as rows over the signal axis.
    fn intensity(&self) -> Vec<Vec<f64>> {
        let m = self.inner.intensity();
        m.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

fn matrix_u64(rows: &[Vec<u64>]) -> PyResult<nalgebra::DMatrix<u64>> {
    let nc = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != nc) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(nalgebra::DMatrix::from_fn(rows.len(), nc, |r, c| rows[r][c]))
}

/// Purity bound of a coincidence-count matrix with its bootstrap error.
#[pyfunction]
#[pyo3(signature = (counts, n_bootstrap=200, seed=1))]
fn purity_from_counts<'py>(
    py: Python<'py>,
    counts: Vec<Vec<u64>>,
    n_bootstrap: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let e = statistical_error(&matrix_u64(&counts)?, n_bootstrap, seed).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("estimate", e.estimate)?;
    d.set_item("std_error", e.std_error)?;
    d.set_item("bias", e.bias)?;
    d.set_item("corrected", e.corrected)?;
    Ok(d)
}

#[pyfunction]
fn lifetime(loaded_q: f64, wavelength_nm: f64) -> f64 {
    photon_lifetime(loaded_q, omega_from_wavelength(wavelength_nm * 1e-9))
}

/// Unheralded g2 of one arm carrying squeezed light of mean `n1` and
/// thermal noise of mean `n2`.
#[pyfunction]
#[pyo3(signature = (n1, n2, mode_purity=1.0))]
fn g2_two_thermal(n1: f64, n2: f64, mode_purity: f64) -> PyResult<f64> {
    stats::g2_two_thermal(n1, n2, mode_purity).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (eta, n1, n2, model="threshold"))]
fn click_probability(eta: f64, n1: f64, n2: f64, model: &str) -> PyResult<f64> {
    Ok(stats::click_probability_two_thermal(eta, n1, n2, click_model(model)?))
}

/// Fits `n1 = sinh²(aP)`, `n2 = bP` per arm to click probabilities.
#[pyfunction]
#[pyo3(signature = (power, p_click_signal, p_click_idler, eta_s, eta_i, model="threshold"))]
fn fit_power<'py>(
    py: Python<'py>,
    power: Vec<f64>,
    p_click_signal: Vec<f64>,
    p_click_idler: Vec<f64>,
    eta_s: f64,
    eta_i: f64,
    model: &str,
) -> PyResult<Bound<'py, PyDict>> {
    if power.len() != p_click_signal.len() || power.len() != p_click_idler.len() {
        return Err(PyValueError::new_err("power and click lists differ in length"));
    }
    let data: Vec<PowerPoint> = power
        .iter()
        .zip(&p_click_signal)
        .zip(&p_click_idler)
        .map(|((&power, &p_click_signal), &p_click_idler)| PowerPoint {
            power,
            p_click_signal,
            p_click_idler,
        })
        .collect();
    let fit = stats::fit_power_scaling(&data, eta_s, eta_i, click_model(model)?).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("a", (fit.params.a, fit.std_errors.a))?;
    d.set_item("b_signal", (fit.params.b_s, fit.std_errors.b_s))?;
    d.set_item("b_idler", (fit.params.b_i, fit.std_errors.b_i))?;
    d.set_item("residuals", fit.residuals)?;
    d.set_item("cost", fit.cost)?;
    Ok(d)
}

/// Writes a synthetic time-tag file for `jta`; returns the record count.
#[pyfunction]
#[pyo3(signature = (
    jta, path, pulses, seed=1, resonator_mean_pairs=0.1, waveguide_pairs_per_pulse=0.0,
    noise_mean_photons=(0.0, 0.0), schmidt_number=None, escape_efficiency=(1.0, 1.0),
    target_heralding_efficiency=None, statistics="thermal", pulse_duration_ps=300.0,
    detector_efficiency=0.85, transmittivity=(1.0, 1.0), jitter_ps=35.0, dark_count_rate_hz=0.0,
))]
#[allow(clippy::too_many_arguments)]
fn generate_tags(
    jta: &PyJta,
    path: &str,
    pulses: u64,
    seed: u64,
    resonator_mean_pairs: f64,
    waveguide_pairs_per_pulse: f64,
    noise_mean_photons: (f64, f64),
    schmidt_number: Option<f64>,
    escape_efficiency: (f64, f64),
    target_heralding_efficiency: Option<f64>,
    statistics: &str,
    pulse_duration_ps: f64,
    detector_efficiency: f64,
    transmittivity: (f64, f64),
    jitter_ps: f64,
    dark_count_rate_hz: f64,
) -> PyResult<u64> {
    let pump = pairsim::biphoton::PumpPulse::rectangular(
        pulse_duration_ps * 1e-12,
        0.5 * (jta.inner.carrier[0] + jta.inner.carrier[1]),
    );
    let mut src = SourceModel::new(&jta.inner, pump).map_err(err)?;
    src.resonator_mean_pairs = resonator_mean_pairs;
    src.waveguide_pair_rate = waveguide_pairs_per_pulse;
    src.noise_mean_photons = [noise_mean_photons.0, noise_mean_photons.1];
    src.schmidt_k = match schmidt_number {
        Some(k) => k,
        None => jta.schmidt_number()?,
    };
    src.escape_efficiency = [escape_efficiency.0, escape_efficiency.1];
    src.statistics = match statistics {
        "thermal" => PairStatistics::Thermal,
        "poisson" => PairStatistics::Poisson,
        _ => return Err(PyValueError::new_err(format!("unknown statistics `{statistics}`"))),
    };
    if let Some(t) = target_heralding_efficiency {
        src.calibrate_escape_for_heralding(t).map_err(err)?;
    }
    let chain = DetectionChain {
        detector_efficiency,
        transmittivity: [transmittivity.0, transmittivity.1],
        jitter_sigma: jitter_ps * 1e-12,
        dark_count_rate: dark_count_rate_hz,
        ..DetectionChain::default()
    };
    let f = File::create(path).map_err(io_err)?;
    write_run(&src, &chain, pulses, seed, BufWriter::new(f)).map_err(err)
}

/// Coincidence analysis of a time-tag file: rates, region totals, g2 per
/// arm and the heralding efficiency.
#[pyfunction]
#[pyo3(signature = (path, detector_efficiency, idler_transmittivity, lifetime_s, bin_ps=60.0, n_bootstrap=200, seed=1))]
#[allow(clippy::too_many_arguments)]
fn analyze_tags<'py>(
    py: Python<'py>,
    path: &str,
    detector_efficiency: f64,
    idler_transmittivity: f64,
    lifetime_s: f64,
    bin_ps: f64,
    n_bootstrap: usize,
    seed: u64,
) -> PyResult<Bound<'py, PyDict>> {
    let reader = TagReader::open(path).map_err(err)?;
    let header = reader.header().clone();
    let meta = |k: &str| header.metadata.get(k).and_then(|v| v.as_f64());
    let window = meta("window_s").unwrap_or(20e-9);
    let spec = HistogramSpec::covering(-2.0 * bin_ps * 1e-12, bin_ps * 1e-12, window);
    let h = py.detach(|| build_histogram_streaming(reader, spec)).map_err(err)?;
    let rates = h.rates(header.repetition_rate);
    let d = PyDict::new(py);
    d.set_item("pulses", h.total_pulses)?;
    d.set_item("singles", (h.singles[0], h.singles[1]))?;
    d.set_item("coincidences", h.total_coincidences())?;
    d.set_item("rate_signal_hz", rates.r_s)?;
    d.set_item("rate_idler_hz", rates.r_i)?;
    d.set_item("rate_coincidence_hz", rates.r_si)?;
    let duration = meta("pulse_duration_s").unwrap_or(300e-12);
    let tax = RegionTaxonomy::from_pulse(duration, lifetime_s, RegionTaxonomy::jitter_margin(meta("jitter_sigma_s").unwrap_or(0.0)));
    let regions = PyDict::new(py);
    for (label, name) in [(RegionLabel::A, "A"), (RegionLabel::B, "B"), (RegionLabel::C, "C"), (RegionLabel::D, "D")] {
        regions.set_item(name, h.region_total(&tax.get(label)))?;
    }
    d.set_item("regions", regions)?;
    for (ch, key) in [(Channel::Signal, "g2_signal"), (Channel::Idler, "g2_idler")] {
        let e = g2_with_bootstrap(&h.multiplicity_distribution(ch), n_bootstrap, seed).map_err(err)?;
        d.set_item(key, (e.value, e.std_error))?;
    }
    let e = heralding_efficiency(&rates, detector_efficiency, idler_transmittivity).map_err(err)?;
    d.set_item("heralding_efficiency", (e.value, e.std_error))?;
    Ok(d)
}

#[pymodule]
fn pairsim_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDevice>()?;
    m.add_class::<PySource>()?;
    m.add_class::<PyJta>()?;
    m.add_function(wrap_pyfunction!(purity_from_counts, m)?)?;
    m.add_function(wrap_pyfunction!(lifetime, m)?)?;
    m.add_function(wrap_pyfunction!(g2_two_thermal, m)?)?;
    m.add_function(wrap_pyfunction!(click_probability, m)?)?;
    m.add_function(wrap_pyfunction!(fit_power, m)?)?;
    m.add_function(wrap_pyfunction!(generate_tags, m)?)?;
    m.add_function(wrap_pyfunction!(analyze_tags, m)?)?;
    Ok(())
}
