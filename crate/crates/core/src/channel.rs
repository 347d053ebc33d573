//! Random MIMO channels and additive noise.
//!
//! A realization holds complex taps `h[r][t][l]`. Each tap matrix is drawn as
//! `R_rx^{1/2} · W · R_tx^{1/2}` with `W` i.i.d. unit-variance circular
//! Gaussian and exponential correlation `r^|i-j|` on both sides, then scaled
//! by the square root of its delay-profile power.

use std::f64::consts::PI;
use std::fmt;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;

use crate::linalg::{
    complex_gaussian, complex_gaussian_matrix, exponential_correlation, scaled_identity,
    symmetric_sqrt, to_complex, CMat, ZERO,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PowerDelayProfile {
    Flat,
    /// Tap `l` has power proportional to `exp(-decay · l)`.
    Exponential {
        taps: usize,
        decay: f64,
    },
}

impl PowerDelayProfile {
    pub fn num_taps(&self) -> usize {
        match *self {
            PowerDelayProfile::Flat => 1,
            PowerDelayProfile::Exponential { taps, .. } => taps,
        }
    }

    /// Normalised tap powers, summing to one.
    pub fn tap_powers(&self) -> Vec<f64> {
        match *self {
            PowerDelayProfile::Flat => vec![1.0],
            PowerDelayProfile::Exponential { taps, decay } => {
                let raw: Vec<f64> = (0..taps).map(|l| (-decay * l as f64).exp()).collect();
                let total: f64 = raw.iter().sum();
                raw.into_iter().map(|p| p / total).collect()
            }
        }
    }
}

impl fmt::Display for PowerDelayProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PowerDelayProfile::Flat => f.write_str("flat"),
            PowerDelayProfile::Exponential { .. } => f.write_str("exp"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelModel {
    n_t: usize,
    n_r: usize,
    profile: PowerDelayProfile,
    correlation: f64,
    block_length: usize,
    tap_amplitudes: Vec<f64>,
    rx_sqrt: CMat,
    tx_sqrt: CMat,
}

impl ChannelModel {
    pub fn new(
        n_t: usize,
        n_r: usize,
        profile: PowerDelayProfile,
        correlation: f64,
        block_length: usize,
    ) -> Result<Self> {
        if n_t == 0 || n_r == 0 {
            return Err(Error::InvalidModel(
                "antenna counts must be at least 1".into(),
            ));
        }
        if let PowerDelayProfile::Exponential { taps, decay } = profile {
            if taps == 0 {
                return Err(Error::InvalidModel("tap count must be at least 1".into()));
            }
            if !(decay > 0.0 && decay.is_finite()) {
                return Err(Error::InvalidModel(format!(
                    "decay must be positive, got {decay}"
                )));
            }
        }
        if !(0.0..1.0).contains(&correlation) {
            return Err(Error::InvalidModel(format!(
                "spatial correlation must lie in [0, 1), got {correlation}"
            )));
        }
        if block_length == 0 {
            return Err(Error::InvalidModel(
                "block length must be at least 1".into(),
            ));
        }
        let tap_amplitudes = profile.tap_powers().into_iter().map(f64::sqrt).collect();
        let side = |n: usize| to_complex(&symmetric_sqrt(&exponential_correlation(n, correlation)));
        Ok(Self {
            n_t,
            n_r,
            profile,
            correlation,
            block_length,
            tap_amplitudes,
            rx_sqrt: side(n_r),
            tx_sqrt: side(n_t),
        })
    }

    /// Uncorrelated flat Rayleigh fading.
    pub fn flat(n_t: usize, n_r: usize) -> Result<Self> {
        Self::new(n_t, n_r, PowerDelayProfile::Flat, 0.0, 1)
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn profile(&self) -> PowerDelayProfile {
        self.profile
    }

    pub fn correlation(&self) -> f64 {
        self.correlation
    }

    pub fn block_length(&self) -> usize {
        self.block_length
    }

    pub fn num_taps(&self) -> usize {
        self.profile.num_taps()
    }

    /// `R_H = E{H^H H} = M_r · R_tx` for the Kronecker model (unit-diagonal `R_rx`).
    pub fn correlation_matrix(&self) -> CMat {
        if self.correlation == 0.0 {
            return scaled_identity(self.n_t, self.n_r as f64);
        }
        let r_tx: DMatrix<f64> = exponential_correlation(self.n_t, self.correlation);
        to_complex(&(r_tx * self.n_r as f64))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelRealization {
    n_r: usize,
    n_t: usize,
    /// One `n_r × n_t` matrix per delay tap.
    taps: Vec<CMat>,
}

impl ChannelRealization {
    pub fn from_taps(taps: Vec<CMat>) -> Result<Self> {
        let first = taps
            .first()
            .ok_or_else(|| Error::InvalidModel("realization needs at least one tap".into()))?;
        let (n_r, n_t) = first.shape();
        if taps.iter().any(|m| m.shape() != (n_r, n_t)) {
            return Err(Error::DimensionMismatch(
                "tap matrices differ in shape".into(),
            ));
        }
        Ok(Self { n_r, n_t, taps })
    }

    pub fn n_r(&self) -> usize {
        self.n_r
    }

    pub fn n_t(&self) -> usize {
        self.n_t
    }

    pub fn taps(&self) -> &[CMat] {
        &self.taps
    }

    /// Tap vector of the link from transmit antenna `t` to receive antenna `r`.
    pub fn link(&self, r: usize, t: usize) -> Vec<Complex64> {
        self.taps.iter().map(|m| m[(r, t)]).collect()
    }

    /// The single-tap matrix `H` of a flat channel, or the zero-delay tap otherwise.
    pub fn flat_matrix(&self) -> &CMat {
        &self.taps[0]
    }

    pub fn frequency_response(&self, n_fft: usize, bins: &[usize]) -> Result<Vec<CMat>> {
        frequency_response(&self.taps, n_fft, bins)
    }

    /// Pass per-antenna time streams through the tapped delay line.
    /// Output stream `r` is `Σ_t h[r][t] * x_t`, truncated to the input length.
    pub fn convolve(&self, streams: &[Vec<Complex64>]) -> Result<Vec<Vec<Complex64>>> {
        if streams.len() != self.n_t {
            return Err(Error::DimensionMismatch(format!(
                "{} transmit streams for {} antennas",
                streams.len(),
                self.n_t
            )));
        }
        let len = streams.first().map_or(0, Vec::len);
        if streams.iter().any(|s| s.len() != len) {
            return Err(Error::DimensionMismatch(
                "transmit streams differ in length".into(),
            ));
        }
        let mut out = vec![vec![ZERO; len]; self.n_r];
        for (r, y) in out.iter_mut().enumerate() {
            for (t, x) in streams.iter().enumerate() {
                for (l, tap) in self.taps.iter().enumerate() {
                    let h = tap[(r, t)];
                    if h == ZERO {
                        continue;
                    }
                    for n in l..len {
                        y[n] += h * x[n - l];
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Draw one realization. Draw order: tap by tap, column-major within each tap.
pub fn draw_channel<R: Rng + ?Sized>(model: &ChannelModel, rng: &mut R) -> ChannelRealization {
    let taps = model
        .tap_amplitudes
        .iter()
        .map(|&amp| {
            let white = complex_gaussian_matrix(rng, model.n_r, model.n_t, 1.0);
            let shaped = if model.correlation == 0.0 {
                white
            } else {
                &model.rx_sqrt * white * &model.tx_sqrt
            };
            shaped * Complex64::new(amp, 0.0)
        })
        .collect();
    ChannelRealization {
        n_r: model.n_r,
        n_t: model.n_t,
        taps,
    }
}

/// `H_k = Σ_l h_l · e^{-2πj·k·l/N}` at each requested bin.
pub fn frequency_response(taps: &[CMat], n_fft: usize, bins: &[usize]) -> Result<Vec<CMat>> {
    if taps.len() > n_fft {
        return Err(Error::TooManyTaps {
            taps: taps.len(),
            n_fft,
        });
    }
    let (rows, cols) = taps.first().map_or((0, 0), |m| m.shape());
    Ok(bins
        .iter()
        .map(|&k| {
            let mut h = CMat::zeros(rows, cols);
            for (l, tap) in taps.iter().enumerate() {
                // reduce before scaling to keep the phase exact for large k·l
                let phase = -2.0 * PI * ((k * l) % n_fft) as f64 / n_fft as f64;
                h += tap * Complex64::from_polar(1.0, phase);
            }
            h
        })
        .collect())
}

/// Complex white noise with total variance `variance` (half per real dimension).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    variance: f64,
}

impl NoiseSpec {
    pub fn new(variance: f64) -> Result<Self> {
        if !(variance >= 0.0) || variance.is_infinite() {
            return Err(Error::InvalidModel(format!("noise variance {variance}")));
        }
        Ok(Self { variance })
    }

    pub fn noiseless() -> Self {
        Self { variance: 0.0 }
    }

    pub fn variance(&self) -> f64 {
        self.variance
    }

    pub fn add_to<R: Rng + ?Sized>(&self, samples: &mut [Complex64], rng: &mut R) {
        if self.variance == 0.0 {
            return;
        }
        for z in samples {
            *z += complex_gaussian(rng, self.variance);
        }
    }
}

/// `σ² = signal_power / 10^(ρ_dB / 10)`.
pub fn snr_to_noise_variance(rho_db: f64, signal_power: f64) -> Result<NoiseSpec> {
    if !(signal_power > 0.0) {
        return Err(Error::InvalidModel(format!("signal power {signal_power}")));
    }
    NoiseSpec::new(signal_power / 10f64.powf(rho_db / 10.0))
}

/// `Y = H · X + V`.
pub fn apply_channel<R: Rng + ?Sized>(
    tx: &CMat,
    h: &CMat,
    noise: NoiseSpec,
    rng: &mut R,
) -> Result<CMat> {
    if h.ncols() != tx.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "H is {}x{}, transmit block is {}x{}",
            h.nrows(),
            h.ncols(),
            tx.nrows(),
            tx.ncols()
        )));
    }
    let mut y = h * tx;
    noise.add_to(y.as_mut_slice(), rng);
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn model_validation() {
        assert!(ChannelModel::new(0, 1, PowerDelayProfile::Flat, 0.0, 1).is_err());
        assert!(ChannelModel::new(1, 1, PowerDelayProfile::Flat, 1.0, 1).is_err());
        let bad = PowerDelayProfile::Exponential {
            taps: 2,
            decay: 0.0,
        };
        assert!(ChannelModel::new(1, 1, bad, 0.0, 1).is_err());
        assert!(ChannelModel::new(1, 1, PowerDelayProfile::Flat, 0.0, 0).is_err());
    }

    #[test]
    fn exponential_tap_powers() {
        let p = PowerDelayProfile::Exponential {
            taps: 4,
            decay: 1.0,
        }
        .tap_powers();
        let raw = [1.0, (-1f64).exp(), (-2f64).exp(), (-3f64).exp()];
        let total: f64 = raw.iter().sum();
        for (a, b) in p.iter().zip(raw) {
            assert!((a - b / total).abs() < 1e-15);
        }
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn frequency_response_examples() {
        let one = vec![CMat::from_element(1, 1, c(1.0, 0.0))];
        for h in frequency_response(&one, 8, &[0, 3, 7]).unwrap() {
            assert_eq!(h[(0, 0)], c(1.0, 0.0));
        }
        let delay = vec![CMat::zeros(1, 1), CMat::from_element(1, 1, c(1.0, 0.0))];
        let h = frequency_response(&delay, 4, &[0, 1, 2, 3]).unwrap();
        let want = [c(1.0, 0.0), c(0.0, -1.0), c(-1.0, 0.0), c(0.0, 1.0)];
        for (h, w) in h.iter().zip(want) {
            assert!((h[(0, 0)] - w).norm() < 1e-15);
        }
        let many = vec![CMat::zeros(1, 1); 5];
        assert!(matches!(
            frequency_response(&many, 4, &[0]),
            Err(Error::TooManyTaps { .. })
        ));
    }

    #[test]
    fn snr_conversion() {
        assert!((snr_to_noise_variance(0.0, 1.0).unwrap().variance() - 1.0).abs() < 1e-15);
        assert!((snr_to_noise_variance(10.0, 1.0).unwrap().variance() - 0.1).abs() < 1e-15);
        assert!((snr_to_noise_variance(3.0103, 2.0).unwrap().variance() - 1.0).abs() < 1e-5);
        assert!(snr_to_noise_variance(0.0, 0.0).is_err());
    }

    #[test]
    fn noiseless_identity_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tx = complex_gaussian_matrix(&mut rng, 2, 5, 1.0);
        let y =
            apply_channel(&tx, &CMat::identity(2, 2), NoiseSpec::noiseless(), &mut rng).unwrap();
        assert_eq!(y, tx);
        assert!(
            apply_channel(&tx, &CMat::identity(3, 3), NoiseSpec::noiseless(), &mut rng).is_err()
        );
    }

    #[test]
    fn correlated_rh_closed_form() {
        let m = ChannelModel::new(3, 2, PowerDelayProfile::Flat, 0.5, 1).unwrap();
        let r = m.correlation_matrix();
        assert!((r[(0, 0)].re - 2.0).abs() < 1e-15);
        assert!((r[(0, 2)].re - 0.5).abs() < 1e-15);
    }

    #[test]
    fn convolution_matches_manual() {
        let taps = vec![
            CMat::from_element(1, 1, c(1.0, 0.0)),
            CMat::from_element(1, 1, c(0.0, 0.5)),
        ];
        let ch = ChannelRealization::from_taps(taps).unwrap();
        let x = vec![c(1.0, 0.0), c(2.0, 0.0), c(3.0, 0.0)];
        let y = ch.convolve(&[x]).unwrap();
        assert_eq!(y[0], vec![c(1.0, 0.0), c(2.0, 0.5), c(3.0, 1.0)]);
    }
}
