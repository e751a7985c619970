use std::io::{Read, Write};

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::axis::UniformAxis;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"JGRD";
const VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    /// Axes are absolute angular frequencies (rad/s).
    Spectral,
    /// Axes are times (s) relative to the pump trigger.
    Temporal,
}

/// Complex two-photon amplitude sampled on a (signal, idler) grid.
///
/// `carrier` holds the frame frequencies of the two photons; temporal
/// amplitudes are envelopes in that frame. `conjugate_start` is the first
/// sample of the Fourier-conjugate axes, so transforms can be inverted exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct JointGrid {
    pub axis_s: UniformAxis,
    pub axis_i: UniformAxis,
    pub values: DMatrix<Complex64>,
    pub domain: Domain,
    pub carrier: [f64; 2],
    pub conjugate_start: Option<[f64; 2]>,
}

impl JointGrid {
    pub fn cell_measure(&self) -> f64 {
        self.axis_s.step * self.axis_i.step
    }

    /// `Σ|A|² Δs Δi`, summed in row-major order.
    pub fn norm_sq(&self) -> f64 {
        let mut acc = 0.0;
        for r in 0..self.values.nrows() {
            for c in 0..self.values.ncols() {
                acc += self.values[(r, c)].norm_sqr();
            }
        }
        acc * self.cell_measure()
    }

    pub fn normalize(&mut self) -> Result<()> {
        let n = self.norm_sq();
        if !(n > 0.0) || !n.is_finite() {
            return Err(Error::Domain("amplitude has zero or non-finite norm".into()));
        }
        let s = 1.0 / n.sqrt();
        self.values.iter_mut().for_each(|v| *v *= s);
        Ok(())
    }

    pub fn intensity(&self) -> DMatrix<f64> {
        self.values.map(|v| v.norm_sqr())
    }

    pub fn transpose(&self) -> JointGrid {
        JointGrid {
            axis_s: self.axis_i,
            axis_i: self.axis_s,
            values: self.values.transpose(),
            domain: self.domain,
            carrier: [self.carrier[1], self.carrier[0]],
            conjugate_start: self.conjugate_start.map(|c| [c[1], c[0]]),
        }
    }

    /// Binary layout, little-endian: magic `JGRD`, version u16, domain u8
    /// (0 spectral, 1 temporal), then for signal and idler axes `start f64,
    /// step f64, len u64`, carriers 2×f64, conjugate starts 2×f64 (NaN when unset), then the
    /// values row-major (signal index outer) as `re f64, im f64`.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        w.write_all(&[match self.domain {
            Domain::Spectral => 0u8,
            Domain::Temporal => 1u8,
        }])?;
        for a in [&self.axis_s, &self.axis_i] {
            w.write_all(&a.start.to_le_bytes())?;
            w.write_all(&a.step.to_le_bytes())?;
            w.write_all(&(a.len as u64).to_le_bytes())?;
        }
        let conj = self.conjugate_start.unwrap_or([f64::NAN; 2]);
        for x in self.carrier.iter().chain(&conj) {
            w.write_all(&x.to_le_bytes())?;
        }
        for r in 0..self.values.nrows() {
            for c in 0..self.values.ncols() {
                let v = self.values[(r, c)];
                w.write_all(&v.re.to_le_bytes())?;
                w.write_all(&v.im.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<JointGrid> {
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("not a joint-grid file".into()));
        }
        let version = u16::from_le_bytes(read_array(&mut r)?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported joint-grid version {version}")));
        }
        let domain = match read_array::<1, _>(&mut r)?[0] {
            0 => Domain::Spectral,
            1 => Domain::Temporal,
            d => return Err(Error::Format(format!("unknown domain tag {d}"))),
        };
        let mut axes = [UniformAxis { start: 0.0, step: 0.0, len: 0 }; 2];
        for a in &mut axes {
            a.start = f64::from_le_bytes(read_array(&mut r)?);
            a.step = f64::from_le_bytes(read_array(&mut r)?);
            a.len = u64::from_le_bytes(read_array(&mut r)?) as usize;
        }
        let mut extra = [0.0; 4];
        for x in &mut extra {
            *x = f64::from_le_bytes(read_array(&mut r)?);
        }
        let (ns, ni) = (axes[0].len, axes[1].len);
        if ns.checked_mul(ni).is_none_or(|n| n > (1 << 28)) {
            return Err(Error::Format("grid dimensions out of range".into()));
        }
        let mut values = DMatrix::zeros(ns, ni);
        for row in 0..ns {
            for col in 0..ni {
                let re = f64::from_le_bytes(read_array(&mut r)?);
                let im = f64::from_le_bytes(read_array(&mut r)?);
                values[(row, col)] = Complex64::new(re, im);
            }
        }
        Ok(JointGrid {
            axis_s: axes[0],
            axis_i: axes[1],
            values,
            domain,
            carrier: [extra[0], extra[1]],
            conjugate_start: (!extra[2].is_nan()).then_some([extra[2], extra[3]]),
        })
    }

    /// `t_s,t_i,intensity` (or `omega_s,omega_i,intensity`) rows.
    pub fn write_intensity_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        match self.domain {
            Domain::Temporal => writeln!(w, "t_s,t_i,intensity")?,
            Domain::Spectral => writeln!(w, "omega_s,omega_i,intensity")?,
        }
        for r in 0..self.values.nrows() {
            for c in 0..self.values.ncols() {
                writeln!(
                    w,
                    "{:.9e},{:.9e},{:.9e}",
                    self.axis_s.value(r),
                    self.axis_i.value(c),
                    self.values[(r, c)].norm_sqr()
                )?;
            }
        }
        Ok(())
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated("joint-grid file ends early".into()),
        _ => Error::Io(e),
    })
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut b = [0u8; N];
    read_exact(r, &mut b)?;
    Ok(b)
}
