//! Photon-number statistics of a squeezed mode mixed with thermal noise,
//! threshold-detector click probabilities and the pump-power scaling fit.

use std::io::BufRead;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::lsq::{self, LsqOptions};

/// Tail mass allowed when truncating a distribution.
pub const TAIL_TOLERANCE: f64 = 1e-9;
pub const MAX_PHOTON_NUMBER: usize = 200;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhotonNumberDistribution {
    /// `probabilities[n]` for `n = 0..=n_max`.
    pub probabilities: Vec<f64>,
}

impl PhotonNumberDistribution {
    pub fn n_max(&self) -> usize {
        self.probabilities.len() - 1
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probabilities.iter().enumerate().map(|(n, p)| n as f64 * p).sum()
    }

    /// `⟨n(n−1)⟩`.
    pub fn second_factorial_moment(&self) -> f64 {
        self.probabilities
            .iter()
            .enumerate()
            .map(|(n, p)| (n * n.saturating_sub(1)) as f64 * p)
            .sum()
    }

    pub fn g2(&self) -> Result<f64> {
        let m = self.mean();
        if !(m > 0.0) {
            return domain("mean photon number is zero; g2 is undefined");
        }
        Ok(self.second_factorial_moment() / (m * m))
    }
}

fn geometric(mu: f64, n_max: usize) -> Vec<f64> {
    let r = mu / (1.0 + mu);
    let mut out = Vec::with_capacity(n_max + 1);
    let mut p = 1.0 / (1.0 + mu);
    for _ in 0..=n_max {
        out.push(p);
        p *= r;
    }
    out
}

fn convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
    (0..a.len())
        .map(|n| (0..=n).map(|k| a[k] * b[n - k]).sum())
        .collect()
}

/// Distribution of the total photon number of independent thermal modes.
/// With `n_max = None` the smallest cutoff with tail below [`TAIL_TOLERANCE`] is used.
pub fn multimode_thermal_pnd(means: &[f64], n_max: Option<usize>) -> Result<PhotonNumberDistribution> {
    if means.is_empty() || means.iter().any(|m| !(*m >= 0.0) || !m.is_finite()) {
        return domain("thermal means must be finite and non-negative");
    }
    let cap = n_max.unwrap_or(MAX_PHOTON_NUMBER);
    let mut probs = vec![0.0; cap + 1];
    probs[0] = 1.0;
    for &mu in means {
        probs = convolve(&probs, &geometric(mu, cap));
    }
    let total: f64 = probs.iter().sum();
    if 1.0 - total >= TAIL_TOLERANCE {
        return Err(Error::Truncation(format!(
            "photon-number cutoff {cap} leaves tail mass {:.3e}",
            1.0 - total
        )));
    }
    if n_max.is_none() {
        let mut acc = 0.0;
        let keep = probs
            .iter()
            .position(|p| {
                acc += p;
                1.0 - acc < TAIL_TOLERANCE
            })
            .unwrap_or(cap);
        probs.truncate(keep + 1);
    }
    Ok(PhotonNumberDistribution { probabilities: probs })
}

/// Convolution of two thermal distributions with means `n1` and `n2`.
pub fn thermal_convolution_pnd(n1: f64, n2: f64, n_max: Option<usize>) -> Result<PhotonNumberDistribution> {
    multimode_thermal_pnd(&[n1, n2], n_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClickModel {
    /// `Σ ρ_n (1 − (1−η)ⁿ)`.
    #[default]
    Threshold,
    /// `Σ_{n≥1} ηⁿ ρ_n`.
    Literal,
}

fn check_efficiency(eta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&eta) {
        return domain(format!("efficiency {eta} outside [0, 1]"));
    }
    Ok(())
}

pub fn click_probability(eta: f64, pnd: &PhotonNumberDistribution, model: ClickModel) -> Result<f64> {
    check_efficiency(eta)?;
    let p: f64 = match model {
        ClickModel::Threshold => pnd
            .probabilities
            .iter()
            .enumerate()
            .map(|(n, p)| p * (1.0 - (1.0 - eta).powi(n as i32)))
            .sum(),
        ClickModel::Literal => pnd
            .probabilities
            .iter()
            .enumerate()
            .skip(1)
            .map(|(n, p)| p * eta.powi(n as i32))
            .sum(),
    };
    Ok(p.clamp(0.0, 1.0))
}

/// Closed form of [`click_probability`] for the two-thermal distribution.
pub fn click_probability_two_thermal(eta: f64, n1: f64, n2: f64, model: ClickModel) -> f64 {
    match model {
        ClickModel::Threshold => 1.0 - 1.0 / ((1.0 + eta * n1) * (1.0 + eta * n2)),
        ClickModel::Literal => {
            let q = 1.0 - eta;
            1.0 / ((1.0 + q * n1) * (1.0 + q * n2)) - 1.0 / ((1.0 + n1) * (1.0 + n2))
        }
    }
}

/// Unheralded g₂ of a squeezed contribution spread over modes of the given
/// purity plus single-mode thermal noise.
pub fn g2_two_thermal(n1: f64, n2: f64, mode_purity: f64) -> Result<f64> {
    if !(n1 >= 0.0) || !(n2 >= 0.0) || !(n1 + n2 > 0.0) {
        return domain("g2 needs non-negative means with a positive total");
    }
    if !(mode_purity > 0.0 && mode_purity <= 1.0) {
        return domain("mode purity must lie in (0, 1]");
    }
    Ok(1.0 + (mode_purity * n1 * n1 + n2 * n2) / (n1 + n2).powi(2))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerPoint {
    pub power: f64,
    pub p_click_signal: f64,
    pub p_click_idler: f64,
}

/// `⟨n₁⟩ = sinh²(aP)`, `⟨n₂⟩ = b·P`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseFitParams {
    pub a: f64,
    pub b_s: f64,
    pub b_i: f64,
}

impl NoiseFitParams {
    pub fn n1(&self, power: f64) -> f64 {
        (self.a * power).sinh().powi(2)
    }

    pub fn n2(&self, power: f64) -> [f64; 2] {
        [self.b_s * power, self.b_i * power]
    }

    pub fn click_probabilities(&self, power: f64, eta: [f64; 2], model: ClickModel) -> [f64; 2] {
        let n1 = self.n1(power);
        let n2 = self.n2(power);
        [
            click_probability_two_thermal(eta[0], n1, n2[0], model),
            click_probability_two_thermal(eta[1], n1, n2[1], model),
        ]
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerFit {
    pub params: NoiseFitParams,
    /// Standard errors of `(a, b_s, b_i)`.
    pub std_errors: NoiseFitParams,
    /// Relative residuals, signal points then idler points.
    pub residuals: Vec<f64>,
    pub cost: f64,
    pub iterations: usize,
    pub model: ClickModel,
}

impl PowerFit {
    /// Mean photon numbers `(n₁, n₂,s, n₂,i)` at `power` with propagated standard errors.
    pub fn means_at(&self, power: f64) -> [(f64, f64); 3] {
        let p = &self.params;
        let e = &self.std_errors;
        let dn1 = 2.0 * (p.a * power).sinh() * (p.a * power).cosh() * power;
        [
            (p.n1(power), dn1.abs() * e.a),
            (p.b_s * power, e.b_s * power),
            (p.b_i * power, e.b_i * power),
        ]
    }
}

fn linear_quadratic(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    // y ≈ b x + c x²
    let (mut s22, mut s23, mut s33, mut s2y, mut s3y) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        s22 += x * x;
        s23 += x * x * x;
        s33 += x.powi(4);
        s2y += x * y;
        s3y += x * x * y;
    }
    let det = s22 * s33 - s23 * s23;
    if det.abs() < 1e-300 {
        return (0.0, 0.0);
    }
    ((s2y * s33 - s3y * s23) / det, (s22 * s3y - s23 * s2y) / det)
}

/// Least-squares fit of `(a, b_s, b_i)` to click probabilities versus pump power.
/// Residuals are relative to the measured probabilities; non-negativity is
/// enforced by fitting square roots of the parameters.
pub fn fit_power_scaling(data: &[PowerPoint], eta_s: f64, eta_i: f64, model: ClickModel) -> Result<PowerFit> {
    check_efficiency(eta_s)?;
    check_efficiency(eta_i)?;
    if eta_s == 0.0 || eta_i == 0.0 {
        return domain("efficiencies must be positive");
    }
    let mut powers: Vec<f64> = data.iter().map(|d| d.power).collect();
    powers.sort_by(f64::total_cmp);
    powers.dedup();
    if powers.len() < 2 {
        return domain("power scan has a single distinct power");
    }
    if powers.len() < 4 {
        return domain(format!("power scan needs at least 4 distinct powers, got {}", powers.len()));
    }
    for d in data {
        let ok = |p: f64| p > 0.0 && p < 1.0;
        if !(d.power > 0.0) || !ok(d.p_click_signal) || !ok(d.p_click_idler) {
            return domain("powers must be positive and click probabilities inside (0, 1)");
        }
    }
    let eta = [eta_s, eta_i];

    let xs: Vec<f64> = data.iter().map(|d| d.power).collect();
    let inv = |p: f64, e: f64| -(1.0 - p).ln() / e;
    let ys: Vec<f64> = data.iter().map(|d| inv(d.p_click_signal, eta_s)).collect();
    let yi: Vec<f64> = data.iter().map(|d| inv(d.p_click_idler, eta_i)).collect();
    let (bs0, cs) = linear_quadratic(&xs, &ys);
    let (bi0, ci) = linear_quadratic(&xs, &yi);
    let pmax = powers[powers.len() - 1];
    let mean_n: f64 = (ys.iter().chain(&yi).sum::<f64>()) / (2 * data.len()) as f64;
    let floor = mean_n / pmax * 1e-3;
    let a0 = (0.5 * (cs + ci)).max(floor / pmax).sqrt();
    let start = [a0.sqrt(), bs0.max(floor).sqrt(), bi0.max(floor).sqrt()];

    let model_of = |p: &NoiseFitParams| -> Vec<f64> {
        let mut r = Vec::with_capacity(2 * data.len());
        for ch in 0..2 {
            for d in data {
                let m = p.click_probabilities(d.power, eta, model)[ch];
                let y = if ch == 0 { d.p_click_signal } else { d.p_click_idler };
                r.push((m - y) / y);
            }
        }
        r
    };
    let unpack = |x: &[f64]| NoiseFitParams {
        a: x[0] * x[0],
        b_s: x[1] * x[1],
        b_i: x[2] * x[2],
    };
    let opts = LsqOptions {
        max_iterations: 500,
        ..LsqOptions::default()
    };
    let sol = lsq::minimize(|x| model_of(&unpack(x)), &start, &opts)?;
    if !sol.converged {
        return Err(Error::Fit(format!(
            "power fit did not converge after {} iterations (cost {:.3e}, params {:?})",
            sol.iterations,
            sol.cost,
            unpack(&sol.params)
        )));
    }
    let params = unpack(&sol.params);

    // Covariance in the natural parameters so that errors stay finite at a boundary.
    let natural = [params.a, params.b_s, params.b_i];
    let f = |x: &[f64]| {
        model_of(&NoiseFitParams {
            a: x[0],
            b_s: x[1],
            b_i: x[2],
        })
    };
    let mut jac = DMatrix::zeros(sol.residuals.len(), 3);
    for j in 0..3 {
        let h = 1e-6 * natural[j].abs().max(floor.max(1e-12));
        let mut up = natural;
        let mut dn = natural;
        up[j] += h;
        dn[j] -= h;
        let (ru, rd) = (f(&up), f(&dn));
        for i in 0..ru.len() {
            jac[(i, j)] = (ru[i] - rd[i]) / (2.0 * h);
        }
    }
    let cov = lsq::covariance(&jac, sol.cost)
        .ok_or_else(|| Error::Fit("power fit covariance is singular".into()))?;
    let se = |k: usize| cov[(k, k)].max(0.0).sqrt();
    Ok(PowerFit {
        params,
        std_errors: NoiseFitParams {
            a: se(0),
            b_s: se(1),
            b_i: se(2),
        },
        residuals: sol.residuals,
        cost: sol.cost,
        iterations: sol.iterations,
        model,
    })
}

/// Reads `power,p_click_signal,p_click_idler` rows after a header line.
pub fn read_power_csv<R: BufRead>(reader: R) -> Result<Vec<PowerPoint>> {
    let mut out = Vec::new();
    for (k, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if k == 0 {
            if line.replace(' ', "") != "power,p_click_signal,p_click_idler" {
                return Err(Error::Format(format!("unexpected power CSV header `{line}`")));
            }
            continue;
        }
        if line.is_empty() {
            continue;
        }
        let v: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("line {}: {e}", k + 1)))?;
        if v.len() != 3 {
            return Err(Error::Format(format!("line {}: expected 3 columns", k + 1)));
        }
        out.push(PowerPoint {
            power: v[0],
            p_click_signal: v[1],
            p_click_idler: v[2],
        });
    }
    Ok(out)
}
