//! Training-based channel estimation.
//!
//! The observation model is `Y = H·P + V` with `Y` of size `M_r × N`, the
//! training matrix `P` of size `M_t × N` and `H` of size `M_r × M_t`. The MMSE
//! estimator is
//!
//! ```text
//! Ĥ = (ρ/M_t) · Y · P^H · (R_H^{-1} + (ρ/M_t) · P · P^H)^{-1}
//! ```
//!
//! with `R_H = E{H^H H}`, and its mean squared error is the trace of the
//! inverted `M_t × M_t` matrix. When `R_H` is `E{H^H H}` (which carries a
//! factor `M_r`), the estimator is the linear MMSE one exactly when
//! `ρ/M_t = 1/(M_r σ²)`; [`mmse_rho_for_noise`] returns that `ρ`.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::linalg::{condition_number, CMat, ZERO};
use crate::{Error, Result};

/// Gram and correlation matrices above this condition number count as singular.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMatrix {
    p: CMat,
}

impl TrainingMatrix {
    /// Wrap an arbitrary `M_t × N` training matrix.
    pub fn from_matrix(p: CMat) -> Result<Self> {
        if p.ncols() < p.nrows() {
            return Err(Error::TooShort {
                m_t: p.nrows(),
                n: p.ncols(),
            });
        }
        Ok(Self { p })
    }

    pub fn matrix(&self) -> &CMat {
        &self.p
    }

    pub fn m_t(&self) -> usize {
        self.p.nrows()
    }

    pub fn len(&self) -> usize {
        self.p.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.p.ncols() == 0
    }

    pub fn gram(&self) -> CMat {
        &self.p * self.p.adjoint()
    }
}

/// First `M_t` rows of the `N`-point DFT matrix: unit-modulus entries with
/// `P · P^H = N · I`.
pub fn design_training(m_t: usize, n: usize) -> Result<TrainingMatrix> {
    if m_t == 0 || n < m_t {
        return Err(Error::TooShort { m_t, n });
    }
    let p = CMat::from_fn(m_t, n, |a, k| {
        Complex64::from_polar(1.0, -2.0 * PI * ((a * k) % n) as f64 / n as f64)
    });
    Ok(TrainingMatrix { p })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Estimator {
    Ls,
    Mmse,
}

impl fmt::Display for Estimator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Estimator::Ls => "ls",
            Estimator::Mmse => "mmse",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PilotLayout {
    /// Every subcarrier carries training, once per `period` symbols.
    Block { period: usize },
    /// `pilots` uniformly spaced subcarriers carry training in every symbol.
    Comb { pilots: usize },
}

impl PilotLayout {
    pub fn validate(&self, n_sc: usize) -> Result<()> {
        match *self {
            PilotLayout::Block { period } if period == 0 => Err(Error::InvalidConfig(
                "block pilot period must be at least 1".into(),
            )),
            PilotLayout::Block { .. } => Ok(()),
            PilotLayout::Comb { pilots } => comb_pilot_positions(n_sc, pilots).map(|_| ()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Interpolation {
    None,
    Linear,
    DftTruncated { kept_taps: usize },
}

impl fmt::Display for Interpolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Interpolation::None => f.write_str("none"),
            Interpolation::Linear => f.write_str("linear"),
            Interpolation::DftTruncated { .. } => f.write_str("dft"),
        }
    }
}

impl FromStr for Estimator {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ls" => Ok(Estimator::Ls),
            "mmse" => Ok(Estimator::Mmse),
            _ => Err("one of ls, mmse".into()),
        }
    }
}

/// Per-subcarrier estimates with their provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelEstimate {
    pub per_subcarrier: Vec<CMat>,
    pub estimator: Estimator,
    pub interpolation: Interpolation,
    pub layout: PilotLayout,
}

impl ChannelEstimate {
    /// `Σ_k ‖H_k − Ĥ_k‖_F²` against the true responses.
    pub fn squared_error(&self, truth: &[CMat]) -> Result<f64> {
        if truth.len() != self.per_subcarrier.len() {
            return Err(Error::LengthMismatch {
                expected: self.per_subcarrier.len(),
                actual: truth.len(),
            });
        }
        Ok(truth
            .iter()
            .zip(&self.per_subcarrier)
            .map(|(h, e)| (h - e).iter().map(|z| z.norm_sqr()).sum::<f64>())
            .sum())
    }
}

fn check_observation(y: &CMat, p: &CMat) -> Result<()> {
    if y.ncols() != p.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "Y has {} columns, P has {}",
            y.ncols(),
            p.ncols()
        )));
    }
    Ok(())
}

fn invert_gram(gram: &CMat) -> Result<CMat> {
    let cond = condition_number(gram);
    if cond > MAX_CONDITION {
        return Err(Error::SingularGram(cond));
    }
    gram.clone().try_inverse().ok_or(Error::SingularGram(cond))
}

/// Both estimators are right-multiplications of `Y` by an `N × M_t` filter
/// that depends only on the training, `R_H` and `ρ`. Building the filter once
/// lets a simulation reuse it across subcarriers and trials.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearEstimator {
    kind: Estimator,
    filter: CMat,
}

impl LinearEstimator {
    /// Filter `P^H · (P · P^H)^{-1}`.
    pub fn ls(p: &TrainingMatrix) -> Result<Self> {
        let gram_inv = invert_gram(&p.gram())?;
        Ok(Self {
            kind: Estimator::Ls,
            filter: p.matrix().adjoint() * gram_inv,
        })
    }

    /// Filter `(ρ/M_t) · P^H · (R_H^{-1} + (ρ/M_t) · P · P^H)^{-1}`; the LS
    /// filter when `rho` is infinite.
    pub fn mmse(p: &TrainingMatrix, r_h: &CMat, rho: f64, m_t: usize) -> Result<Self> {
        if rho == f64::INFINITY {
            return Ok(Self {
                kind: Estimator::Mmse,
                ..Self::ls(p)?
            });
        }
        let core = mmse_core(r_h, p, rho, m_t)?;
        let scale = Complex64::new(rho / m_t as f64, 0.0);
        Ok(Self {
            kind: Estimator::Mmse,
            filter: p.matrix().adjoint() * core * scale,
        })
    }

    pub fn kind(&self) -> Estimator {
        self.kind
    }

    pub fn filter(&self) -> &CMat {
        &self.filter
    }

    pub fn apply(&self, y: &CMat) -> Result<CMat> {
        if y.ncols() != self.filter.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "Y has {} columns, training has {}",
                y.ncols(),
                self.filter.nrows()
            )));
        }
        Ok(y * &self.filter)
    }
}

/// `Ĥ_LS = Y · P^H · (P · P^H)^{-1}`.
pub fn estimate_ls(y: &CMat, p: &TrainingMatrix) -> Result<CMat> {
    check_observation(y, p.matrix())?;
    LinearEstimator::ls(p)?.apply(y)
}

/// The matrix `(R_H^{-1} + (ρ/M_t) · P · P^H)^{-1}` shared by the estimator
/// and its error.
fn mmse_core(r_h: &CMat, p: &TrainingMatrix, rho: f64, m_t: usize) -> Result<CMat> {
    if !(rho > 0.0) {
        return Err(Error::NonPositiveSnr(rho));
    }
    let n = p.m_t();
    if r_h.shape() != (n, n) {
        return Err(Error::DimensionMismatch(format!(
            "R_H is {}x{}, expected {n}x{n}",
            r_h.nrows(),
            r_h.ncols()
        )));
    }
    if condition_number(r_h) > MAX_CONDITION {
        return Err(Error::SingularCorrelation);
    }
    let r_inv = r_h
        .clone()
        .try_inverse()
        .ok_or(Error::SingularCorrelation)?;
    let scale = Complex64::new(rho / m_t as f64, 0.0);
    let inner = r_inv + p.gram() * scale;
    inner.try_inverse().ok_or(Error::SingularCorrelation)
}

/// MMSE estimate of `H`. An infinite `rho` (noiseless observation) falls back
/// to the LS estimate.
pub fn estimate_mmse(
    y: &CMat,
    p: &TrainingMatrix,
    r_h: &CMat,
    rho: f64,
    m_t: usize,
) -> Result<CMat> {
    check_observation(y, p.matrix())?;
    LinearEstimator::mmse(p, r_h, rho, m_t)?.apply(y)
}

/// `J = tr{(R_H^{-1} + (ρ/M_t) · P · P^H)^{-1}}`. Zero for infinite `rho`.
pub fn mmse_error_analytic(r_h: &CMat, p: &TrainingMatrix, rho: f64, m_t: usize) -> Result<f64> {
    if rho == f64::INFINITY {
        return Ok(0.0);
    }
    Ok(mmse_core(r_h, p, rho, m_t)?.trace().re)
}

/// The `ρ` at which the MMSE formula is the linear MMSE estimator for noise
/// variance `noise_var`, given `R_H = E{H^H H}`: `ρ = M_t / (M_r · σ²)`.
pub fn mmse_rho_for_noise(noise_var: f64, m_t: usize, m_r: usize) -> f64 {
    if noise_var == 0.0 {
        f64::INFINITY
    } else {
        m_t as f64 / (m_r as f64 * noise_var)
    }
}

/// `{0, L, 2L, .., (N_p − 1)L}` with `L = N_sc / N_p`.
pub fn comb_pilot_positions(n_sc: usize, n_p: usize) -> Result<Vec<usize>> {
    if n_p == 0 || n_sc % n_p != 0 {
        return Err(Error::NotDivisible { n_sc, n_p });
    }
    let spacing = n_sc / n_p;
    Ok((0..n_p).map(|m| m * spacing).collect())
}

fn pilot_spacing(n_pilots: usize, n_sc: usize) -> Result<usize> {
    comb_pilot_positions(n_sc, n_pilots)?;
    Ok(n_sc / n_pilots)
}

fn check_shapes(pilots: &[CMat]) -> Result<(usize, usize)> {
    let shape = pilots.first().map_or((0, 0), |m| m.shape());
    if pilots.iter().any(|m| m.shape() != shape) {
        return Err(Error::DimensionMismatch(
            "pilot estimates differ in shape".into(),
        ));
    }
    Ok(shape)
}

/// Linear interpolation between comb pilots, holding the last pilot value
/// beyond the final pilot.
pub fn interpolate_linear(pilots: &[CMat], n_sc: usize) -> Result<Vec<CMat>> {
    if pilots.len() < 2 {
        return Err(Error::TooFewPilots(pilots.len()));
    }
    let spacing = pilot_spacing(pilots.len(), n_sc)?;
    check_shapes(pilots)?;
    let last = pilots.len() - 1;
    Ok((0..n_sc)
        .map(|k| {
            let m = k / spacing;
            if m >= last {
                return pilots[last].clone();
            }
            let frac = (k % spacing) as f64 / spacing as f64;
            &pilots[m] * Complex64::new(1.0 - frac, 0.0)
                + &pilots[m + 1] * Complex64::new(frac, 0.0)
        })
        .collect())
}

/// Delay-domain interpolation with tap truncation.
#[derive(Clone)]
pub struct DftInterpolator {
    n_p: usize,
    n_sc: usize,
    kept_taps: usize,
    inverse: Arc<dyn Fft<f64>>,
    forward: Arc<dyn Fft<f64>>,
}

impl fmt::Debug for DftInterpolator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("DftInterpolator")
            .field("n_p", &self.n_p)
            .field("n_sc", &self.n_sc)
            .field("kept_taps", &self.kept_taps)
            .finish()
    }
}

impl DftInterpolator {
    pub fn new(n_p: usize, n_sc: usize, kept_taps: usize) -> Result<Self> {
        pilot_spacing(n_p, n_sc)?;
        if kept_taps == 0 || kept_taps > n_p {
            return Err(Error::BadTapCount {
                kept: kept_taps,
                n_p,
            });
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            n_p,
            n_sc,
            kept_taps,
            inverse: planner.plan_fft_inverse(n_p),
            forward: planner.plan_fft_forward(n_sc),
        })
    }

    /// One scalar component: pilot values at the comb positions to all bins.
    pub fn interpolate_component(&self, pilots: &[Complex64]) -> Result<Vec<Complex64>> {
        if pilots.len() != self.n_p {
            return Err(Error::LengthMismatch {
                expected: self.n_p,
                actual: pilots.len(),
            });
        }
        let mut taps = pilots.to_vec();
        self.inverse.process(&mut taps);
        let mut spectrum = vec![ZERO; self.n_sc];
        let scale = 1.0 / self.n_p as f64;
        for (dst, src) in spectrum.iter_mut().zip(&taps[..self.kept_taps]) {
            *dst = src * scale;
        }
        self.forward.process(&mut spectrum);
        Ok(spectrum)
    }

    pub fn interpolate(&self, pilots: &[CMat]) -> Result<Vec<CMat>> {
        if pilots.len() != self.n_p {
            return Err(Error::LengthMismatch {
                expected: self.n_p,
                actual: pilots.len(),
            });
        }
        let (rows, cols) = check_shapes(pilots)?;
        let mut out = vec![CMat::zeros(rows, cols); self.n_sc];
        let mut component = vec![ZERO; self.n_p];
        for r in 0..rows {
            for c in 0..cols {
                for (dst, p) in component.iter_mut().zip(pilots) {
                    *dst = p[(r, c)];
                }
                for (k, v) in self
                    .interpolate_component(&component)?
                    .into_iter()
                    .enumerate()
                {
                    out[k][(r, c)] = v;
                }
            }
        }
        Ok(out)
    }
}

/// Keep the first `kept_taps` delay taps of the pilot response and
/// re-synthesise all `n_sc` subcarriers.
pub fn interpolate_dft(pilots: &[CMat], n_sc: usize, kept_taps: usize) -> Result<Vec<CMat>> {
    DftInterpolator::new(pilots.len(), n_sc, kept_taps)?.interpolate(pilots)
}
