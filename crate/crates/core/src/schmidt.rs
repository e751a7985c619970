//! Schmidt decomposition of joint amplitudes and bootstrap error bars for
//! purities estimated from coincidence histograms.

use nalgebra::{DMatrix, Dim, RawStorage};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::biphoton::JointGrid;
use crate::error::{domain, Result};

/// Relative singular-value floor below which modes are discarded.
pub const TRUNCATION: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchmidtResult {
    /// Normalized Schmidt coefficients λ_k, descending, summing to one.
    pub coefficients: Vec<f64>,
    pub purity: f64,
    pub schmidt_number: f64,
    pub mode_count_retained: usize,
    /// Set when the amplitude was reconstructed from an intensity without phase.
    pub upper_bound: bool,
}

impl SchmidtResult {
    fn from_singular_values(mut sv: Vec<f64>, upper_bound: bool) -> Result<Self> {
        if sv.iter().any(|s| !s.is_finite()) {
            return domain("amplitude contains non-finite values");
        }
        sv.sort_by(|a, b| b.total_cmp(a));
        let max = sv.first().copied().unwrap_or(0.0);
        if !(max > 0.0) {
            return domain("amplitude is identically zero");
        }
        sv.retain(|&s| s >= TRUNCATION * max);
        let total: f64 = sv.iter().map(|s| s * s).sum();
        let coefficients: Vec<f64> = sv.iter().map(|s| s * s / total).collect();
        let purity: f64 = coefficients.iter().map(|l| l * l).sum();
        Ok(Self {
            mode_count_retained: coefficients.len(),
            coefficients,
            purity,
            schmidt_number: 1.0 / purity,
            upper_bound,
        })
    }
}

/// Schmidt coefficients of a complex amplitude matrix.
pub fn schmidt_of_matrix(a: &DMatrix<Complex64>) -> Result<SchmidtResult> {
    check_nonempty(a)?;
    let sv = a.clone().singular_values();
    SchmidtResult::from_singular_values(sv.iter().copied().collect(), false)
}

/// Schmidt coefficients of a real amplitude matrix.
pub fn schmidt_of_real(a: &DMatrix<f64>) -> Result<SchmidtResult> {
    check_nonempty(a)?;
    let sv = a.clone().singular_values();
    SchmidtResult::from_singular_values(sv.iter().copied().collect(), false)
}

pub fn schmidt_decompose(amplitude: &JointGrid) -> Result<SchmidtResult> {
    schmidt_of_matrix(&amplitude.values)
}

/// Decomposes the element-wise square root of an intensity; the purity is an
/// upper bound on that of any amplitude with this modulus.
pub fn purity_upper_bound_from_jti(jti: &DMatrix<f64>) -> Result<SchmidtResult> {
    if jti.iter().any(|&v| v < 0.0 || v.is_nan()) {
        return domain("intensity has negative or NaN entries");
    }
    let mut r = schmidt_of_real(&jti.map(f64::sqrt))?;
    r.upper_bound = true;
    Ok(r)
}

fn check_nonempty<T, R: Dim, C: Dim, S: RawStorage<T, R, C>>(
    a: &nalgebra::Matrix<T, R, C, S>,
) -> Result<()> {
    if a.nrows() == 0 || a.ncols() == 0 {
        return domain("amplitude matrix is empty");
    }
    Ok(())
}

/// Bootstrap summary of the upper-bound purity of a count histogram.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PurityError {
    /// Purity of the square root of the observed counts.
    pub estimate: f64,
    /// Standard deviation over multinomial resamples.
    pub std_error: f64,
    /// Mean resampled purity minus the estimate.
    pub bias: f64,
    /// `estimate − bias`.
    pub corrected: f64,
    pub replicas: usize,
}

/// Multinomial bootstrap of the purity bound of a histogram. Replica `r`
/// draws from the ChaCha stream `r` of `seed`, so results do not depend on
/// scheduling.
pub fn statistical_error(counts: &DMatrix<u64>, n_bootstrap: usize, seed: u64) -> Result<PurityError> {
    if n_bootstrap < 100 {
        return domain("at least 100 bootstrap replicas are required");
    }
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return domain("histogram has no counts");
    }
    let as_real = |c: &DMatrix<u64>| c.map(|v| v as f64);
    let estimate = purity_upper_bound_from_jti(&as_real(counts))?.purity;
    let cells: Vec<(usize, u64)> = counts
        .iter()
        .enumerate()
        .filter(|(_, &c)| c > 0)
        .map(|(k, &c)| (k, c))
        .collect();
    let (nr, nc) = counts.shape();
    let purities: Vec<f64> = (0..n_bootstrap)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(r as u64);
            let mut sample = DMatrix::<f64>::zeros(nr, nc);
            let mut remaining = total;
            let mut mass_left = total;
            for &(k, c) in &cells {
                if remaining == 0 {
                    break;
                }
                let p = (c as f64 / mass_left as f64).min(1.0);
                let draw = Binomial::new(remaining, p).expect("valid binomial").sample(&mut rng);
                sample[k] = draw as f64;
                remaining -= draw;
                mass_left -= c;
            }
            purity_upper_bound_from_jti(&sample).map(|s| s.purity).unwrap_or(f64::NAN)
        })
        .collect();
    let n = purities.len() as f64;
    let mean = purities.iter().sum::<f64>() / n;
    let var = purities.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let bias = mean - estimate;
    Ok(PurityError {
        estimate,
        std_error: var.sqrt(),
        bias,
        corrected: estimate - bias,
        replicas: n_bootstrap,
    })
}
