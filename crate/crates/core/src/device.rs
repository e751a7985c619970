//! Transfer-matrix model of a microring coupled to its bus through an
//! asymmetric Mach-Zehnder arm, with an all-pass auxiliary ring in the
//! external arm.
//!
//! Port convention for every 2×2 block: index 0 is the bus, index 1 the main
//! ring. Field phases follow `e^{+iφ}` for propagation, so a delay line of
//! length `L` multiplies by `a e^{i n_g ω L / c}` with `a = e^{-αL/2}`.
//!
//! Topology: bus → coupler(κ²) → { inner half of the main ring | external arm
//! (length `L_m/2 + L_mzi`, phase `θ_mzi`, auxiliary all-pass) } → coupler(κ²)
//! → bus out, with the ring closed by its remaining half perimeter (which
//! carries the main-ring heater).

use std::f64::consts::PI;
use std::io::Write;

use nalgebra::Matrix2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::lsq::{self, LsqOptions};
use crate::axis::UniformAxis;
use crate::units::{db_per_cm_to_alpha, omega_from_wavelength, to_db, SPEED_OF_LIGHT};

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Default excess loss of the auxiliary ring, chosen so its through-port dips
/// are about 0.3 dB deep.
pub const AUX_EXCESS_LOSS_DB: f64 = 0.011;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaveguideParams {
    pub group_index: f64,
    /// Propagation loss in dB/cm, shared by straight sections and bends.
    pub loss_db_per_cm: f64,
}

impl WaveguideParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.group_index > 0.0) {
            return domain("group_index must be positive");
        }
        if !(self.loss_db_per_cm >= 0.0) {
            return domain("propagation loss must be non-negative");
        }
        Ok(())
    }

    /// Power attenuation coefficient in 1/m.
    pub fn alpha(&self) -> f64 {
        db_per_cm_to_alpha(self.loss_db_per_cm)
    }

    /// Q of a resonance limited only by propagation loss, `ω n_g / (c α)`.
    pub fn intrinsic_q(&self, omega: f64) -> f64 {
        omega * self.group_index / (SPEED_OF_LIGHT * self.alpha())
    }

    /// Field transmission of a section of length `length`, loss included.
    pub fn propagate(&self, omega: f64, length: f64) -> Complex64 {
        let amp = (-0.5 * self.alpha() * length).exp();
        Complex64::from_polar(amp, self.group_index * omega * length / SPEED_OF_LIGHT)
    }
}

impl Default for WaveguideParams {
    fn default() -> Self {
        Self {
            group_index: 1.9,
            loss_db_per_cm: 0.11,
        }
    }
}

/// Geometry, couplings and heater phases of the resonant interferometric coupler.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeviceParams {
    /// Main-ring perimeter `L_m`.
    pub main_perimeter_m: f64,
    /// Excess length `L_mzi` of the external bus arm over the inner half ring.
    pub mzi_length_m: f64,
    /// Auxiliary-ring perimeter `L_a`.
    pub aux_perimeter_m: f64,
    /// Power coupling of each of the two main-ring point couplers.
    pub kappa_sq: f64,
    /// Power coupling of the auxiliary ring to the external arm.
    pub kappa2_sq: f64,
    /// Phase of the external arm (static offset included).
    pub theta_mzi_rad: f64,
    pub theta_main_heater_rad: f64,
    pub theta_aux_heater_rad: f64,
    /// Extra loss per auxiliary round trip (coupler and heater excess), dB.
    #[serde(default)]
    pub aux_excess_loss_db: f64,
    /// Flip the sign convention of the auxiliary phase winding.
    #[serde(default)]
    pub reverse_aux_winding: bool,
    pub waveguide: WaveguideParams,
}

/// Which resonance of a pump/signal/idler triplet a spec describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Pump,
    Signal,
    Idler,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ResonanceSpec {
    /// Resonance angular frequency ω₀ (rad/s).
    pub center_omega: f64,
    pub loaded_q: f64,
    pub intrinsic_q: f64,
    pub role: Role,
}

impl ResonanceSpec {
    pub fn new(center_omega: f64, loaded_q: f64, intrinsic_q: f64, role: Role) -> Result<Self> {
        if !(center_omega > 0.0) {
            return domain("center frequency must be positive");
        }
        if !(loaded_q > 0.0) || loaded_q > intrinsic_q {
            return domain(format!(
                "loaded Q {loaded_q} must be positive and not exceed intrinsic Q {intrinsic_q}"
            ));
        }
        Ok(Self {
            center_omega,
            loaded_q,
            intrinsic_q,
            role,
        })
    }

    /// Energy decay rate ω₀/Q (rad/s), i.e. the FWHM of the intensity Lorentzian.
    pub fn linewidth(&self) -> f64 {
        self.center_omega / self.loaded_q
    }

    pub fn lifetime(&self) -> f64 {
        photon_lifetime(self.loaded_q, self.center_omega)
    }

    /// Fraction of the total loss rate that couples out to the bus.
    pub fn escape_efficiency(&self) -> f64 {
        1.0 - self.loaded_q / self.intrinsic_q
    }
}

/// Uniform angular-frequency axis (rad/s).
pub type FrequencyAxis = UniformAxis;

/// Complex through-port amplitude sampled on a uniform frequency axis.
#[derive(Debug, Clone)]
pub struct SpectrumTrace {
    pub axis: FrequencyAxis,
    pub amplitude: Vec<Complex64>,
}

impl SpectrumTrace {
    pub fn omega(&self, k: usize) -> f64 {
        self.axis.value(k)
    }

    pub fn transmission(&self) -> Vec<f64> {
        self.amplitude.iter().map(|a| a.norm_sqr()).collect()
    }

    /// Writes `frequency_hz,re,im,transmission_db` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "frequency_hz,re,im,transmission_db")?;
        for (k, a) in self.amplitude.iter().enumerate() {
            writeln!(
                w,
                "{:.6},{:.12e},{:.12e},{:.9}",
                self.omega(k) / (2.0 * PI),
                a.re,
                a.im,
                to_db(a.norm_sqr())
            )?;
        }
        Ok(())
    }

    /// Indices of local transmission minima at least `min_depth_db` below the
    /// larger of the two neighbouring maxima.
    pub fn find_dips(&self, min_depth_db: f64) -> Vec<usize> {
        let t: Vec<f64> = self.transmission().into_iter().map(to_db).collect();
        let n = t.len();
        let mut dips = Vec::new();
        for k in 1..n.saturating_sub(1) {
            if !(t[k] < t[k - 1] && t[k] <= t[k + 1]) {
                continue;
            }
            // Walk uphill on both sides to the enclosing maxima.
            let mut l = k;
            while l > 0 && t[l - 1] >= t[l] {
                l -= 1;
            }
            let mut r = k;
            while r + 1 < n && t[r + 1] >= t[r] {
                r += 1;
            }
            if t[l].min(t[r]) - t[k] >= min_depth_db {
                dips.push(k);
            }
        }
        dips
    }
}

/// Auxiliary all-pass phase at one frequency.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AuxPhase {
    /// Phase in radians, continuous in ω; winds 0 → 2π across each resonance
    /// when overcoupled and equals π exactly on resonance.
    pub phase: f64,
    /// Field transmission magnitude of the all-pass section.
    pub magnitude: f64,
    /// `false` when the intrinsic loss exceeds the coupling loss; the phase then
    /// swings and returns instead of winding (net winding 0).
    pub overcoupled: bool,
}

/// Lossless point coupler `[[t, iκ], [iκ, t]]` with `t = √(1−κ²)`.
pub fn coupler_matrix(kappa_sq: f64) -> Result<Matrix2<Complex64>> {
    if !(0.0..=1.0).contains(&kappa_sq) {
        return domain(format!("power coupling {kappa_sq} outside [0, 1]"));
    }
    let t = Complex64::new((1.0 - kappa_sq).sqrt(), 0.0);
    let k = I * kappa_sq.sqrt();
    Ok(Matrix2::new(t, k, k, t))
}

/// Photon (energy) lifetime τ = Q/ω.
pub fn photon_lifetime(q: f64, omega: f64) -> f64 {
    q / omega
}

/// Closed-form effective coupling of the interferometric coupler for an arm
/// phase difference `delta_phi`: `4κ²(1−κ²)cos²(Δφ/2)`.
pub fn effective_coupling_closed_form(kappa_sq: f64, delta_phi: f64) -> f64 {
    4.0 * kappa_sq * (1.0 - kappa_sq) * (0.5 * delta_phi).cos().powi(2)
}

impl Default for DeviceParams {
    /// Silicon-nitride defaults: 200 GHz main FSR, `L_mzi = 2 L_m`,
    /// `L_a = 3/4 L_m`, κ² = 0.03, κ₂² = 0.2, 0.11 dB/cm. The main ring is
    /// aligned to 1543 nm with the auxiliary ring anti-resonant there, and the
    /// MZI phase is set for a loaded Q of 8×10⁵.
    fn default() -> Self {
        let waveguide = WaveguideParams::default();
        let main = SPEED_OF_LIGHT / (waveguide.group_index * 200e9);
        let mut dev = Self {
            main_perimeter_m: main,
            mzi_length_m: 2.0 * main,
            aux_perimeter_m: 0.75 * main,
            kappa_sq: 0.03,
            kappa2_sq: 0.2,
            theta_mzi_rad: 0.0,
            theta_main_heater_rad: 0.0,
            theta_aux_heater_rad: 0.0,
            aux_excess_loss_db: AUX_EXCESS_LOSS_DB,
            reverse_aux_winding: false,
            waveguide,
        };
        let omega_p = omega_from_wavelength(1543e-9);
        dev.align_aux(omega_p, 0.5);
        dev.calibrate_mzi_for_q(omega_p, 8e5)
            .expect("default device calibration");
        dev
    }
}

impl DeviceParams {
    pub fn validate(&self) -> Result<()> {
        self.waveguide.validate()?;
        if !(0.0..=1.0).contains(&self.kappa_sq) || !(0.0..=1.0).contains(&self.kappa2_sq) {
            return domain("power couplings must lie in [0, 1]");
        }
        if !(self.aux_excess_loss_db >= 0.0) {
            return domain("aux excess loss must be non-negative");
        }
        if !(self.main_perimeter_m > 0.0 && self.mzi_length_m > 0.0 && self.aux_perimeter_m > 0.0)
        {
            return domain("all lengths must be positive");
        }
        Ok(())
    }

    /// Main-ring free spectral range in Hz.
    pub fn main_fsr_hz(&self) -> f64 {
        SPEED_OF_LIGHT / (self.waveguide.group_index * self.main_perimeter_m)
    }

    pub fn aux_fsr_hz(&self) -> f64 {
        SPEED_OF_LIGHT / (self.waveguide.group_index * self.aux_perimeter_m)
    }

    fn aux_round_trip(&self, omega: f64) -> (f64, f64) {
        let a = (-0.5 * self.waveguide.alpha() * self.aux_perimeter_m).exp()
            * 10f64.powf(-self.aux_excess_loss_db / 20.0);
        let phi = self.waveguide.group_index * omega * self.aux_perimeter_m / SPEED_OF_LIGHT
            + self.theta_aux_heater_rad;
        (a, phi)
    }

    /// Auxiliary all-pass phase `arg[(t − a e^{iφ})/(1 − t a e^{iφ})]`,
    /// unwrapped so it runs from 0 to 2π across the resonance nearest to `omega`.
    pub fn aux_phase(&self, omega: f64) -> AuxPhase {
        if self.kappa2_sq == 0.0 {
            return AuxPhase {
                phase: 0.0,
                magnitude: 1.0,
                overcoupled: false,
            };
        }
        let (a, phi) = self.aux_round_trip(omega);
        let t = (1.0 - self.kappa2_sq).sqrt();
        // Detuning from the nearest resonance, in (-π, π].
        let phi_r = phi - 2.0 * PI * (phi / (2.0 * PI)).round();
        let e = Complex64::from_polar(1.0, phi_r);
        let den = Complex64::new(1.0, 0.0) - t * a * e;
        let overcoupled = t < a;
        let phase = if overcoupled {
            // t − a e^{iφ} = −a e^{iφ}(1 − (t/a)e^{−iφ}); the last factor never winds.
            let tail = Complex64::new(1.0, 0.0) - (t / a) * e.conj();
            PI + phi_r + tail.arg() - den.arg()
        } else {
            (Complex64::new(t, 0.0) - a * e).arg() - den.arg()
        };
        let magnitude = ((Complex64::new(t, 0.0) - a * e) / den).norm();
        let phase = if self.reverse_aux_winding { -phase } else { phase };
        AuxPhase {
            phase,
            magnitude,
            overcoupled,
        }
    }

    /// Intensity FWHM of the auxiliary resonances (rad/s).
    pub fn aux_linewidth(&self) -> f64 {
        let (a, _) = self.aux_round_trip(0.0);
        let ta = (1.0 - self.kappa2_sq).sqrt() * a;
        let t_rt = self.waveguide.group_index * self.aux_perimeter_m / SPEED_OF_LIGHT;
        2.0 * (1.0 - ta) / ta.sqrt() / t_rt
    }

    fn inner_path(&self, omega: f64) -> Complex64 {
        self.waveguide.propagate(omega, 0.5 * self.main_perimeter_m)
    }

    fn arm_path(&self, omega: f64) -> Complex64 {
        let aux = self.aux_phase(omega);
        self.waveguide
            .propagate(omega, 0.5 * self.main_perimeter_m + self.mzi_length_m)
            * Complex64::from_polar(aux.magnitude, aux.phase + self.theta_mzi_rad)
    }

    fn closing_path(&self, omega: f64) -> Complex64 {
        self.waveguide.propagate(omega, 0.5 * self.main_perimeter_m)
            * Complex64::from_polar(1.0, self.theta_main_heater_rad)
    }

    /// Phase difference between the external arm and the inner half ring.
    pub fn mzi_phase(&self, omega: f64) -> f64 {
        (self.arm_path(omega) / self.inner_path(omega)).arg()
    }

    /// 2×2 matrix of the coupler–{arm | inner half ring}–coupler block.
    pub fn effective_coupler(&self, omega: f64) -> Matrix2<Complex64> {
        let c = coupler_matrix(self.kappa_sq).expect("validated coupling");
        let d = Matrix2::new(
            self.arm_path(omega),
            Complex64::new(0.0, 0.0),
            Complex64::new(0.0, 0.0),
            self.inner_path(omega),
        );
        c * d * c
    }

    /// Effective power coupling `|M₁₀|²` between bus and main ring.
    pub fn effective_coupling(&self, omega: f64) -> f64 {
        self.effective_coupler(omega)[(1, 0)].norm_sqr()
    }

    /// Complex round-trip factor of the main ring seen from its closing half.
    fn round_trip(&self, omega: f64) -> Complex64 {
        self.effective_coupler(omega)[(1, 1)] * self.closing_path(omega)
    }

    /// Group delay of one main-ring round trip, `d arg(ρ)/dω`, including the
    /// dispersion of the interferometric coupler.
    pub fn round_trip_delay(&self, omega: f64) -> f64 {
        let h = 1e-6 * 2.0 * PI * self.main_fsr_hz();
        (self.round_trip(omega + h) / self.round_trip(omega - h)).arg() / (2.0 * h)
    }

    /// Through-port field amplitude for unit input.
    pub fn through(&self, omega: f64) -> Complex64 {
        let m = self.effective_coupler(omega);
        let h = self.closing_path(omega);
        m[(0, 0)] + m[(0, 1)] * m[(1, 0)] * h / (Complex64::new(1.0, 0.0) - m[(1, 1)] * h)
    }

    /// Intracavity field (at the start of the closing half) per unit incident field.
    pub fn field_enhancement(&self, omega: f64) -> Complex64 {
        let m = self.effective_coupler(omega);
        let h = self.closing_path(omega);
        m[(1, 0)] / (Complex64::new(1.0, 0.0) - m[(1, 1)] * h)
    }

    /// Through-port spectrum on `axis`.
    pub fn transmission_spectrum(&self, axis: &FrequencyAxis) -> Result<SpectrumTrace> {
        self.validate()?;
        if axis.len < 2 || !(axis.step > 0.0) {
            return domain("frequency axis needs at least two increasing points");
        }
        let fsr = 2.0 * PI * self.main_fsr_hz();
        if axis.span() < fsr {
            return Err(Error::Coverage(format!(
                "axis spans {:.3e} rad/s, less than one main FSR ({fsr:.3e})",
                axis.span()
            )));
        }
        let t_rt = self.waveguide.group_index * self.main_perimeter_m / SPEED_OF_LIGHT;
        let r_max = axis
            .iter()
            .map(|w| self.round_trip(w).norm())
            .fold(0.0, f64::max);
        let narrowest = 2.0 * (1.0 - r_max) / r_max.sqrt() / t_rt;
        if narrowest / axis.step < 5.0 {
            return Err(Error::Resolution(format!(
                "{:.2} points per narrowest linewidth ({narrowest:.3e} rad/s), need 5",
                narrowest / axis.step
            )));
        }
        let amplitude = axis.iter().map(|w| self.through(w)).collect();
        Ok(SpectrumTrace {
            axis: *axis,
            amplitude,
        })
    }

    /// Locates the main-ring resonance nearest to `omega_guess` from the
    /// round-trip phase and reports its loaded Q (FWHM) and the intrinsic Q of
    /// the uncoupled ring.
    pub fn resonance_near(&self, omega_guess: f64, role: Role) -> Result<ResonanceSpec> {
        self.validate()?;
        let fsr = 2.0 * PI * self.main_fsr_hz();
        let phase = |w: f64| self.round_trip(w).arg();
        // Secant iterations on the wrapped phase, which is smooth near zero.
        let mut w = omega_guess;
        let slope0 = self.waveguide.group_index * self.main_perimeter_m / SPEED_OF_LIGHT;
        let mut w_prev = w;
        let mut p_prev = phase(w);
        w -= p_prev / slope0;
        for _ in 0..60 {
            let p = phase(w);
            if p.abs() < 1e-13 {
                break;
            }
            let slope = if (w - w_prev).abs() > 0.0 {
                (p - p_prev) / (w - w_prev)
            } else {
                slope0
            };
            let slope = if slope > 0.1 * slope0 { slope } else { slope0 };
            w_prev = w;
            p_prev = p;
            w -= p / slope;
        }
        if (w - omega_guess).abs() > 0.75 * fsr || phase(w).abs() > 1e-9 {
            return Err(Error::Fit(format!(
                "no main resonance found near {omega_guess:.6e} rad/s"
            )));
        }
        let dphi = self.round_trip_delay(w);
        let r = self.round_trip(w).norm();
        let fwhm = 2.0 * (1.0 - r) / r.sqrt() / dphi;
        let a = (-0.5 * self.waveguide.alpha() * self.main_perimeter_m).exp();
        let fwhm_int = 2.0 * (1.0 - a) / a.sqrt() / slope0;
        ResonanceSpec::new(w, w / fwhm, w / fwhm_int, role)
    }

    /// Centre of the auxiliary resonance nearest to `omega`.
    pub fn aux_resonance_near(&self, omega: f64) -> f64 {
        let slope = self.waveguide.group_index * self.aux_perimeter_m / SPEED_OF_LIGHT;
        let (_, phi) = self.aux_round_trip(omega);
        let k = (phi / (2.0 * PI)).round();
        omega - (phi - 2.0 * PI * k) / slope
    }

    /// Depth of the auxiliary dip nearest to `omega` (negative dB), measured
    /// against the point half an auxiliary FSR away. Dips that fall close to a
    /// main resonance are skipped.
    pub fn aux_dip_extinction_db(&self, omega: f64) -> Result<f64> {
        self.validate()?;
        let aux_fsr = 2.0 * PI * self.aux_fsr_hz();
        let fsr = 2.0 * PI * self.main_fsr_hz();
        let main = self.resonance_near(omega, Role::Pump)?.center_omega;
        let clear = |w: f64| {
            let f = ((w - main) / fsr).rem_euclid(1.0);
            f > 0.2 && f < 0.8
        };
        let first = self.aux_resonance_near(omega);
        for k in [0, 1, -1, 2, -2, 3, -3] {
            let on = first + k as f64 * aux_fsr;
            let off = on + 0.5 * aux_fsr;
            if clear(on) && clear(off) {
                return Ok(to_db(self.through(on).norm_sqr()) - to_db(self.through(off).norm_sqr()));
            }
        }
        Err(Error::Fit("every auxiliary dip near omega overlaps a main resonance".into()))
    }

    /// Sets the main heater so a main resonance sits exactly at `omega`.
    pub fn align_main_resonance(&mut self, omega: f64) {
        self.theta_main_heater_rad = 0.0;
        let p = self.round_trip(omega).arg();
        self.theta_main_heater_rad = (-p).rem_euclid(2.0 * PI);
    }

    /// Sets the auxiliary heater so the auxiliary round-trip phase at `omega`
    /// equals `2π · offset_fraction` (0 puts a resonance at `omega`, 0.5 puts
    /// `omega` halfway between two resonances).
    pub fn align_aux(&mut self, omega: f64, offset_fraction: f64) {
        self.theta_aux_heater_rad = 0.0;
        let (_, phi) = self.aux_round_trip(omega);
        self.theta_aux_heater_rad = (2.0 * PI * offset_fraction - phi).rem_euclid(2.0 * PI);
    }

    fn loaded_q_at(&self, omega: f64) -> Result<f64> {
        let mut d = self.clone();
        d.align_main_resonance(omega);
        Ok(d.resonance_near(omega, Role::Pump)?.loaded_q)
    }

    /// Chooses `θ_mzi` so the main resonance at `omega` has loaded Q `target`,
    /// then realigns that resonance onto `omega`. Searches the branch running
    /// from the decoupled point (highest Q) toward full coupling.
    pub fn calibrate_mzi_for_q(&mut self, omega: f64, target: f64) -> Result<()> {
        // Arm phase with θ_mzi = 0 at the resonance.
        self.theta_mzi_rad = 0.0;
        let base = self.mzi_phase(omega);
        let eval = |x: f64, dev: &Self| -> Result<f64> {
            let mut d = dev.clone();
            d.theta_mzi_rad = PI + x - base;
            d.loaded_q_at(omega)
        };
        let (mut lo, mut hi) = (1e-6, PI - 1e-6);
        let q_lo = eval(lo, self)?;
        let q_hi = eval(hi, self)?;
        if !(q_hi <= target && target <= q_lo) {
            return Err(Error::Fit(format!(
                "target Q {target:.4e} outside reachable range [{q_hi:.4e}, {q_lo:.4e}]"
            )));
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if eval(mid, self)? > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        self.theta_mzi_rad = (PI + 0.5 * (lo + hi) - base).rem_euclid(2.0 * PI);
        self.align_main_resonance(omega);
        Ok(())
    }

    /// Moves the auxiliary heater from anti-resonance toward the resonance at
    /// `omega` until the main resonance there reaches loaded Q `target`.
    /// Both approach directions are scanned; the smaller aux displacement wins.
    pub fn tune_aux_for_q(&mut self, omega: f64, target: f64) -> Result<()> {
        let eval = |f: f64| -> Result<f64> {
            let mut d = self.clone();
            d.align_aux(omega, f);
            d.loaded_q_at(omega)
        };
        let steps = 400;
        let mut best: Option<(f64, f64)> = None;
        for side in [1.0, -1.0] {
            let mut prev_f = 0.5 * side;
            let mut prev = eval(prev_f)? - target;
            for k in 1..steps {
                let f = side * (0.5 - 0.5 * k as f64 / steps as f64);
                let cur = eval(f)? - target;
                if prev.signum() != cur.signum() {
                    if best.map_or(true, |(b, _)| f.abs() > b.abs()) {
                        best = Some((f, prev_f));
                    }
                    break;
                }
                prev_f = f;
                prev = cur;
            }
        }
        let (mut a, mut b) =
            best.ok_or_else(|| Error::Fit(format!("aux tuning cannot reach Q {target:.4e}")))?;
        let fa = eval(a)? - target;
        for _ in 0..60 {
            let m = 0.5 * (a + b);
            let fm = eval(m)? - target;
            if fm.signum() == fa.signum() {
                a = m;
            } else {
                b = m;
            }
        }
        self.align_aux(omega, 0.5 * (a + b));
        self.align_main_resonance(omega);
        Ok(())
    }
}

/// Side of critical coupling assumed when converting dip depth to intrinsic Q.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingRegime {
    #[default]
    Overcoupled,
    Undercoupled,
}

#[derive(Debug, Clone)]
pub struct ResonanceFit {
    pub resonance: ResonanceSpec,
    /// Off-resonance transmission level.
    pub baseline: f64,
    /// Fractional dip depth `1 − T(ω₀)/baseline`.
    pub depth: f64,
    pub residual_norm: f64,
}

/// Fits a Lorentzian dip `B[1 − D/(1 + 4(ω−ω₀)²/Γ²)]` to the transmission
/// inside `window` and reports `Q = ω₀/Γ`.
pub fn fit_resonance(
    trace: &SpectrumTrace,
    window: (f64, f64),
    regime: CouplingRegime,
    role: Role,
) -> Result<ResonanceFit> {
    let (lo, hi) = window;
    let idx: Vec<usize> = (0..trace.axis.len)
        .filter(|&k| (lo..=hi).contains(&trace.omega(k)))
        .collect();
    if idx.len() < 8 {
        return Err(Error::Fit("window holds fewer than 8 samples".into()));
    }
    let w: Vec<f64> = idx.iter().map(|&k| trace.omega(k)).collect();
    let y: Vec<f64> = idx.iter().map(|&k| trace.amplitude[k].norm_sqr()).collect();
    let (kmin, &ymin) = y
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("non-empty");
    let edge = 0.5 * (y[0] + y[y.len() - 1]);
    let ymax = y.iter().copied().fold(f64::MIN, f64::max);
    let depth = 1.0 - ymin / ymax;
    if depth < 1e-4 {
        return Err(Error::Fit("no dip in window (flat spectrum)".into()));
    }
    let half = ymin + 0.5 * (edge - ymin);
    // Contiguous runs below the half-depth level.
    let mut runs = 0;
    let mut inside = false;
    let mut width_samples = 0usize;
    for &v in &y {
        if v < half {
            if !inside {
                runs += 1;
                inside = true;
            }
            width_samples += 1;
        } else {
            inside = false;
        }
    }
    if runs != 1 {
        return Err(Error::Fit(format!("{runs} dips found in window, expected one")));
    }
    if width_samples < 10 {
        return Err(Error::Resolution(format!(
            "only {width_samples} samples across the FWHM, need 10"
        )));
    }
    let w0 = w[kmin];
    let gamma0 = width_samples as f64 * trace.axis.step;
    // Fit in scaled coordinates x = (ω − w0)/Γ₀ for conditioning.
    let xs: Vec<f64> = w.iter().map(|v| (v - w0) / gamma0).collect();
    let model = |p: &[f64], x: f64| p[0] * (1.0 - p[1] / (1.0 + 4.0 * ((x - p[2]) / p[3]).powi(2)));
    let f = |p: &[f64]| -> Vec<f64> {
        xs.iter().zip(&y).map(|(&x, &yv)| model(p, x) - yv).collect()
    };
    let sol = lsq::minimize(f, &[edge, 1.0 - ymin / edge, 0.0, 1.0], &LsqOptions::default())?;
    if !sol.converged {
        return Err(Error::Fit("Lorentzian fit did not converge".into()));
    }
    let p = &sol.params;
    let omega0 = w0 + p[2] * gamma0;
    let fwhm = p[3].abs() * gamma0;
    let loaded_q = omega0 / fwhm;
    let t0 = (1.0 - p[1]).clamp(0.0, 1.0);
    let intrinsic_q = match regime {
        CouplingRegime::Overcoupled => 2.0 * loaded_q / (1.0 - t0.sqrt()),
        CouplingRegime::Undercoupled => 2.0 * loaded_q / (1.0 + t0.sqrt()),
    };
    Ok(ResonanceFit {
        resonance: ResonanceSpec::new(omega0, loaded_q, intrinsic_q.max(loaded_q), role)?,
        baseline: p[0],
        depth: p[1],
        residual_norm: sol.residual_norm(),
    })
}
