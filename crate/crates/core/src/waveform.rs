//! MC-CDMA transmit and receive primitives.
//!
//! Each data symbol is replicated onto `G` adjacent subcarriers with the chip
//! signs of its spreading code. The multicarrier modulator is a unitary
//! inverse DFT followed by a cyclic prefix; the demodulator strips the prefix
//! and applies the unitary forward DFT.

use std::f64::consts::FRAC_1_SQRT_2;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::codes::SpreadingCode;
use crate::linalg::ZERO;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModulationScheme {
    Bpsk,
    Qpsk,
}

impl ModulationScheme {
    pub fn bits_per_symbol(self) -> usize {
        match self {
            ModulationScheme::Bpsk => 1,
            ModulationScheme::Qpsk => 2,
        }
    }

    /// Hard-decision demapping, the inverse of [`map_symbols`].
    pub fn demap(self, symbols: &[Complex64]) -> Vec<u8> {
        let mut bits = Vec::with_capacity(symbols.len() * self.bits_per_symbol());
        for s in symbols {
            match self {
                ModulationScheme::Bpsk => bits.push(u8::from(s.re < 0.0)),
                ModulationScheme::Qpsk => {
                    bits.push(u8::from(s.re < 0.0));
                    bits.push(u8::from(s.im < 0.0));
                }
            }
        }
        bits
    }
}

impl fmt::Display for ModulationScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModulationScheme::Bpsk => "bpsk",
            ModulationScheme::Qpsk => "qpsk",
        })
    }
}

impl FromStr for ModulationScheme {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "bpsk" => Ok(ModulationScheme::Bpsk),
            "qpsk" => Ok(ModulationScheme::Qpsk),
            _ => Err("one of bpsk, qpsk".into()),
        }
    }
}

/// Unit-energy constellation mapping. BPSK: 0 → +1, 1 → −1. QPSK: Gray map,
/// first bit on the real axis, second on the imaginary axis.
pub fn map_symbols(bits: &[u8], scheme: ModulationScheme) -> Result<Vec<Complex64>> {
    let sign = |b: u8| if b == 0 { 1.0 } else { -1.0 };
    match scheme {
        ModulationScheme::Bpsk => Ok(bits.iter().map(|&b| Complex64::new(sign(b), 0.0)).collect()),
        ModulationScheme::Qpsk => {
            if bits.len() % 2 != 0 {
                return Err(Error::OddBitCount);
            }
            Ok(bits
                .chunks_exact(2)
                .map(|p| Complex64::new(sign(p[0]) * FRAC_1_SQRT_2, sign(p[1]) * FRAC_1_SQRT_2))
                .collect())
        }
    }
}

/// `x · chips[k]` for every chip.
pub fn spread_symbol(x: Complex64, code: &SpreadingCode) -> Vec<Complex64> {
    code.chips().iter().map(|&c| x * f64::from(c)).collect()
}

/// Despread `G` received bins with combining `weights`.
///
/// Returns `Σ w_k c_k y_k / Σ w_k r_k`, where `response` is the channel gain
/// seen by each chip. With `w_k = conj(H_k) / (|H_k|² + σ²)` and `r_k = H_k`
/// this is the per-subcarrier MMSE combiner normalised to be unbiased.
pub fn despread(
    bins: &[Complex64],
    code: &SpreadingCode,
    weights: &[Complex64],
    response: &[Complex64],
) -> Result<Complex64> {
    let g = code.len();
    for len in [bins.len(), weights.len(), response.len()] {
        if len != g {
            return Err(Error::LengthMismatch {
                expected: g,
                actual: len,
            });
        }
    }
    let mut num = ZERO;
    let mut den = ZERO;
    for k in 0..g {
        num += weights[k] * f64::from(code.chips()[k]) * bins[k];
        den += weights[k] * response[k];
    }
    if den.norm() < 1e-12 {
        return Err(Error::DegenerateWeights(den.norm()));
    }
    Ok(num / den)
}

/// Per-subcarrier combining rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Combiner {
    Mmse,
    ZeroForcing,
    EqualGain,
}

impl Combiner {
    /// SISO weight for a subcarrier with gain `h` and noise variance `noise_var`.
    pub fn weight(self, h: Complex64, noise_var: f64) -> Complex64 {
        match self {
            Combiner::Mmse => h.conj() / (h.norm_sqr() + noise_var),
            Combiner::ZeroForcing => {
                if h.norm_sqr() == 0.0 {
                    ZERO
                } else {
                    h.inv()
                }
            }
            Combiner::EqualGain => {
                let n = h.norm();
                if n == 0.0 {
                    ZERO
                } else {
                    h.conj() / n
                }
            }
        }
    }
}

impl fmt::Display for Combiner {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Combiner::Mmse => "mmse",
            Combiner::ZeroForcing => "zf",
            Combiner::EqualGain => "egc",
        })
    }
}

impl FromStr for Combiner {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mmse" => Ok(Combiner::Mmse),
            "zf" => Ok(Combiner::ZeroForcing),
            "egc" => Ok(Combiner::EqualGain),
            _ => Err("one of mmse, zf, egc".into()),
        }
    }
}

/// Multicarrier modem with cached transform plans.
#[derive(Clone)]
pub struct Modem {
    n_fft: usize,
    cp_len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    scale: f64,
}

impl fmt::Debug for Modem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Modem")
            .field("n_fft", &self.n_fft)
            .field("cp_len", &self.cp_len)
            .finish()
    }
}

impl Modem {
    pub fn new(n_fft: usize, cp_len: usize) -> Result<Self> {
        if n_fft == 0 || cp_len >= n_fft {
            return Err(Error::BadGuard { cp_len, n_fft });
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n_fft,
            cp_len,
            forward: planner.plan_fft_forward(n_fft),
            inverse: planner.plan_fft_inverse(n_fft),
            scale: 1.0 / (n_fft as f64).sqrt(),
        })
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn cp_len(&self) -> usize {
        self.cp_len
    }

    pub fn symbol_len(&self) -> usize {
        self.n_fft + self.cp_len
    }

    /// Zero-pad `column` to `n_fft` bins, unitary IDFT, prepend the cyclic prefix.
    pub fn modulate(&self, column: &[Complex64]) -> Result<Vec<Complex64>> {
        let mut out = Vec::with_capacity(self.symbol_len());
        self.modulate_into(column, &mut out)?;
        Ok(out)
    }

    /// Appends one modulated symbol to `out`.
    pub fn modulate_into(&self, column: &[Complex64], out: &mut Vec<Complex64>) -> Result<()> {
        if column.len() > self.n_fft {
            return Err(Error::TooManySubcarriers {
                n_sc: column.len(),
                n_fft: self.n_fft,
            });
        }
        let mut buf = vec![ZERO; self.n_fft];
        buf[..column.len()].copy_from_slice(column);
        self.inverse.process(&mut buf);
        buf.iter_mut().for_each(|z| *z *= self.scale);
        out.extend_from_slice(&buf[self.n_fft - self.cp_len..]);
        out.extend_from_slice(&buf);
        Ok(())
    }

    /// Strip the prefix, unitary DFT, return the first `n_sc` bins.
    pub fn demodulate(&self, samples: &[Complex64], n_sc: usize) -> Result<Vec<Complex64>> {
        if samples.len() != self.symbol_len() {
            return Err(Error::LengthMismatch {
                expected: self.symbol_len(),
                actual: samples.len(),
            });
        }
        if n_sc > self.n_fft {
            return Err(Error::TooManySubcarriers {
                n_sc,
                n_fft: self.n_fft,
            });
        }
        let mut buf = samples[self.cp_len..].to_vec();
        self.forward.process(&mut buf);
        buf.truncate(n_sc);
        buf.iter_mut().for_each(|z| *z *= self.scale);
        Ok(buf)
    }
}

pub fn mc_modulate(column: &[Complex64], n_fft: usize, cp_len: usize) -> Result<Vec<Complex64>> {
    Modem::new(n_fft, cp_len)?.modulate(column)
}

pub fn mc_demodulate(
    samples: &[Complex64],
    n_fft: usize,
    cp_len: usize,
    n_sc: usize,
) -> Result<Vec<Complex64>> {
    Modem::new(n_fft, cp_len)?.demodulate(samples, n_sc)
}

/// Subcarrier × symbol × transmit-antenna grid with a pilot mask shared by
/// all antennas.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    n_sc: usize,
    symbols: usize,
    antennas: usize,
    n_fft: usize,
    cp_len: usize,
    grid: Vec<Complex64>,
    pilot_mask: Vec<bool>,
}

impl Frame {
    pub fn new(
        n_sc: usize,
        symbols: usize,
        antennas: usize,
        n_fft: usize,
        cp_len: usize,
    ) -> Result<Self> {
        if n_sc > n_fft {
            return Err(Error::TooManySubcarriers { n_sc, n_fft });
        }
        if cp_len >= n_fft {
            return Err(Error::BadGuard { cp_len, n_fft });
        }
        Ok(Self {
            n_sc,
            symbols,
            antennas,
            n_fft,
            cp_len,
            grid: vec![ZERO; n_sc * symbols * antennas],
            pilot_mask: vec![false; n_sc * symbols],
        })
    }

    fn idx(&self, k: usize, t: usize, a: usize) -> usize {
        debug_assert!(k < self.n_sc && t < self.symbols && a < self.antennas);
        (a * self.symbols + t) * self.n_sc + k
    }

    pub fn n_sc(&self) -> usize {
        self.n_sc
    }

    pub fn symbols(&self) -> usize {
        self.symbols
    }

    pub fn antennas(&self) -> usize {
        self.antennas
    }

    pub fn n_fft(&self) -> usize {
        self.n_fft
    }

    pub fn cp_len(&self) -> usize {
        self.cp_len
    }

    pub fn get(&self, k: usize, t: usize, a: usize) -> Complex64 {
        self.grid[self.idx(k, t, a)]
    }

    pub fn set(&mut self, k: usize, t: usize, a: usize, v: Complex64) {
        let i = self.idx(k, t, a);
        self.grid[i] = v;
    }

    pub fn is_pilot(&self, k: usize, t: usize) -> bool {
        self.pilot_mask[t * self.n_sc + k]
    }

    pub fn mark_pilot(&mut self, k: usize, t: usize) {
        self.pilot_mask[t * self.n_sc + k] = true;
    }

    /// The `n_sc` values sent by antenna `a` at symbol `t`.
    pub fn column(&self, t: usize, a: usize) -> &[Complex64] {
        let start = self.idx(0, t, a);
        &self.grid[start..start + self.n_sc]
    }

    /// Time-domain stream of antenna `a`: every symbol modulated back to back.
    pub fn modulate_antenna(&self, modem: &Modem, a: usize) -> Result<Vec<Complex64>> {
        let mut out = Vec::with_capacity(self.symbols * modem.symbol_len());
        for t in 0..self.symbols {
            modem.modulate_into(self.column(t, a), &mut out)?;
        }
        Ok(out)
    }
}
