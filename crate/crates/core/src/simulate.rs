//! Seeded Monte-Carlo engine.
//!
//! One trial is one fading block: a frame of `block_length` MC-CDMA symbols
//! sent from `n_t` antennas through a freshly drawn channel, received on
//! `n_r` antennas, estimated, equalized, despread and counted. Every trial
//! owns a ChaCha8 stream keyed by `(master_seed, point, trial)`, so trials can
//! run in any order on any number of workers.
//!
//! Sweeps reduce per-trial contributions in fixed-size chunks and merge the
//! chunk totals in index order. The floating-point summation order is thus
//! the same for the sequential and the parallel executor.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::channel::{
    draw_channel, snr_to_noise_variance, ChannelModel, ChannelRealization, NoiseSpec,
    PowerDelayProfile,
};
use crate::codes::{walsh_hadamard_set, SpreadingCode};
use crate::estimation::{
    comb_pilot_positions, design_training, interpolate_linear, mmse_error_analytic,
    mmse_rho_for_noise, ChannelEstimate, DftInterpolator, Estimator, Interpolation,
    LinearEstimator, PilotLayout, TrainingMatrix,
};
use crate::linalg::{complex_gaussian_matrix, frobenius_sq, scaled_identity, CMat, ONE, ZERO};
use crate::waveform::{despread, map_symbols, Combiner, Frame, Modem, ModulationScheme};
use crate::{Error, Result};

/// Trials per reduction chunk.
pub const CHUNK_TRIALS: u64 = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorSelection {
    Ls,
    Mmse,
    Both,
}

impl EstimatorSelection {
    pub fn includes(self, e: Estimator) -> bool {
        matches!(
            (self, e),
            (EstimatorSelection::Both, _)
                | (EstimatorSelection::Ls, Estimator::Ls)
                | (EstimatorSelection::Mmse, Estimator::Mmse)
        )
    }
}

impl fmt::Display for EstimatorSelection {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EstimatorSelection::Ls => "ls",
            EstimatorSelection::Mmse => "mmse",
            EstimatorSelection::Both => "both",
        })
    }
}

impl FromStr for EstimatorSelection {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "ls" => Ok(EstimatorSelection::Ls),
            "mmse" => Ok(EstimatorSelection::Mmse),
            "both" => Ok(EstimatorSelection::Both),
            _ => Err("one of ls, mmse, both".into()),
        }
    }
}

/// Which channel knowledge the detector uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CsiSource {
    Perfect,
    Estimated(Estimator),
}

impl fmt::Display for CsiSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CsiSource::Perfect => f.write_str("perfect"),
            CsiSource::Estimated(e) => e.fmt(f),
        }
    }
}

impl FromStr for CsiSource {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "perfect" => Ok(CsiSource::Perfect),
            "ls" => Ok(CsiSource::Estimated(Estimator::Ls)),
            "mmse" => Ok(CsiSource::Estimated(Estimator::Mmse)),
            _ => Err("one of perfect, ls, mmse".into()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub n_t: usize,
    pub n_r: usize,
    /// Processing gain G.
    pub pg: usize,
    pub users: usize,
    pub n_sc: usize,
    pub n_fft: usize,
    pub cp_len: usize,
    pub scheme: ModulationScheme,
    pub profile: PowerDelayProfile,
    pub correlation: f64,
    /// Symbols per fading block, which is also the frame length.
    pub block_length: usize,
    /// Training symbols at the head of a block-type frame.
    pub training_len: usize,
    pub layout: PilotLayout,
    pub estimators: EstimatorSelection,
    pub interpolation: Interpolation,
    pub csi: CsiSource,
    pub combiner: Combiner,
    pub snr_grid_db: Vec<f64>,
    pub trials: u64,
    pub master_seed: u64,
    pub mse_normalized: bool,
}

impl SimConfig {
    /// Defaults for everything except the antenna counts and processing gain.
    pub fn new(n_t: usize, n_r: usize, pg: usize) -> Self {
        let users = 2.min(pg.max(1));
        let n_fft = (pg * users).max(1).next_power_of_two();
        let block_length = 8.max(n_t + 1);
        Self {
            n_t,
            n_r,
            pg,
            users,
            n_sc: n_fft,
            n_fft,
            cp_len: n_fft / 8,
            scheme: ModulationScheme::Qpsk,
            profile: PowerDelayProfile::Flat,
            correlation: 0.0,
            block_length,
            training_len: n_t,
            layout: PilotLayout::Block {
                period: block_length,
            },
            estimators: EstimatorSelection::Both,
            interpolation: Interpolation::None,
            csi: CsiSource::Estimated(Estimator::Mmse),
            combiner: Combiner::Mmse,
            snr_grid_db: (0..=6).map(|i| 5.0 * i as f64).collect(),
            trials: 1000,
            master_seed: 0,
            mse_normalized: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_t == 0 || self.n_r == 0 {
            return bad("antenna counts must be at least 1".into());
        }
        if self.pg == 0 || !self.pg.is_power_of_two() {
            return bad(format!(
                "processing gain {} must be a power of two (Walsh codes)",
                self.pg
            ));
        }
        if self.users == 0 || self.users > self.pg {
            return bad(format!("users {} must lie in 1..={}", self.users, self.pg));
        }
        if self.n_sc == 0 || self.n_sc > self.n_fft {
            return bad(format!("n_sc {} must lie in 1..={}", self.n_sc, self.n_fft));
        }
        if self.n_sc % self.pg != 0 {
            return bad(format!("pg {} must divide n_sc {}", self.pg, self.n_sc));
        }
        if self.cp_len >= self.n_fft {
            return bad(format!(
                "cp_len {} must be below n_fft {}",
                self.cp_len, self.n_fft
            ));
        }
        if self.trials == 0 {
            return bad("trials must be at least 1".into());
        }
        if self.snr_grid_db.is_empty() {
            return bad("SNR grid is empty".into());
        }
        if self.snr_grid_db.iter().any(|s| !s.is_finite()) {
            return bad("SNR grid values must be finite".into());
        }
        if let CsiSource::Estimated(e) = self.csi {
            if !self.estimators.includes(e) {
                return bad(format!(
                    "detection uses {e} estimates but {e} is not enabled"
                ));
            }
        }
        if self.combiner == Combiner::ZeroForcing && self.n_r < self.n_t {
            return bad("zero-forcing needs n_r >= n_t".into());
        }
        self.channel_model()?;
        self.layout.validate(self.n_sc)?;
        match self.layout {
            PilotLayout::Block { period } => {
                if period != self.block_length {
                    return bad(format!(
                        "block pilot period {period} must equal block_length {}",
                        self.block_length
                    ));
                }
                if self.training_len < self.n_t {
                    return bad(format!(
                        "training_len {} is shorter than n_t {}",
                        self.training_len, self.n_t
                    ));
                }
                if self.training_len >= self.block_length {
                    return bad(format!(
                        "training_len {} leaves no data symbols in a block of {}",
                        self.training_len, self.block_length
                    ));
                }
            }
            PilotLayout::Comb { pilots } => {
                if self.block_length < self.n_t {
                    return bad(format!(
                        "comb training spans block_length {} symbols, fewer than n_t {}",
                        self.block_length, self.n_t
                    ));
                }
                if self.n_sc - pilots < self.pg {
                    return bad(format!(
                        "{} data subcarriers cannot hold one spreading block of {}",
                        self.n_sc - pilots,
                        self.pg
                    ));
                }
                match self.interpolation {
                    Interpolation::None => {
                        return bad("comb pilots need linear or dft interpolation".into())
                    }
                    Interpolation::Linear if pilots < 2 => {
                        return Err(Error::TooFewPilots(pilots));
                    }
                    Interpolation::DftTruncated { kept_taps } => {
                        if self.n_sc != self.n_fft {
                            return bad("dft interpolation needs n_sc == n_fft".into());
                        }
                        if kept_taps == 0 || kept_taps > pilots {
                            return Err(Error::BadTapCount {
                                kept: kept_taps,
                                n_p: pilots,
                            });
                        }
                    }
                    Interpolation::Linear => {}
                }
            }
        }
        Ok(())
    }

    pub fn channel_model(&self) -> Result<ChannelModel> {
        ChannelModel::new(
            self.n_t,
            self.n_r,
            self.profile,
            self.correlation,
            self.block_length,
        )
    }

    /// Noise variance per subcarrier at `snr_db`, for unit symbol power per
    /// subcarrier and transmit antenna.
    pub fn noise_at(&self, snr_db: f64) -> Result<NoiseSpec> {
        snr_to_noise_variance(snr_db, 1.0)
    }
}

/// Counter-based stream for one trial.
pub fn trial_rng(master_seed: u64, point: u64, trial: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&master_seed.to_le_bytes());
    key[8..16].copy_from_slice(&point.to_le_bytes());
    key[16..24].copy_from_slice(&trial.to_le_bytes());
    key[24..].copy_from_slice(b"mccdma\0\0");
    ChaCha8Rng::from_seed(key)
}

/// What one trial adds to a point's totals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialContribution {
    pub bit_errors: u64,
    pub bits: u64,
    pub symbol_errors: u64,
    pub symbols: u64,
    /// Mean over subcarriers of `‖H_k − Ĥ_k‖_F²`.
    pub sq_err_ls: Option<f64>,
    pub sq_err_mmse: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Moments {
    sum: f64,
    sum_sq: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.sum += v;
        self.sum_sq += v * v;
    }

    fn merge(&mut self, o: &Moments) {
        self.sum += o.sum;
        self.sum_sq += o.sum_sq;
    }

    fn mean(&self, n: u64) -> f64 {
        self.sum / n as f64
    }

    /// Standard error of the mean.
    fn std_error(&self, n: u64) -> f64 {
        if n < 2 {
            return f64::NAN;
        }
        let n_f = n as f64;
        let mean = self.sum / n_f;
        let var = ((self.sum_sq - n_f * mean * mean) / (n_f - 1.0)).max(0.0);
        (var / n_f).sqrt()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Accumulator {
    trials: u64,
    bit_errors: u64,
    bits: u64,
    symbol_errors: u64,
    symbols: u64,
    ls: Moments,
    mmse: Moments,
    gap: Moments,
}

impl Accumulator {
    fn push(&mut self, c: &TrialContribution) {
        self.trials += 1;
        self.bit_errors += c.bit_errors;
        self.bits += c.bits;
        self.symbol_errors += c.symbol_errors;
        self.symbols += c.symbols;
        if let Some(v) = c.sq_err_ls {
            self.ls.push(v);
        }
        if let Some(v) = c.sq_err_mmse {
            self.mmse.push(v);
        }
        if let (Some(l), Some(m)) = (c.sq_err_ls, c.sq_err_mmse) {
            self.gap.push(l - m);
        }
    }

    fn merge(&mut self, o: &Accumulator) {
        self.trials += o.trials;
        self.bit_errors += o.bit_errors;
        self.bits += o.bits;
        self.symbol_errors += o.symbol_errors;
        self.symbols += o.symbols;
        self.ls.merge(&o.ls);
        self.mmse.merge(&o.mmse);
        self.gap.merge(&o.gap);
    }
}

/// Results for one SNR point. MSE fields are per coefficient when the
/// config's `mse_normalized` flag is set, raw Frobenius otherwise; disabled
/// estimators give NaN.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRecord {
    pub snr_db: f64,
    pub mse_ls: f64,
    pub mse_mmse: f64,
    pub mse_theory: f64,
    pub ber: f64,
    pub ser: f64,
    pub bit_errors: u64,
    pub bits: u64,
    pub symbol_errors: u64,
    pub symbols: u64,
    pub trials: u64,
    /// Raw `E‖H − Ĥ‖_F²` regardless of the normalization flag.
    pub mse_ls_raw: f64,
    pub mse_mmse_raw: f64,
    /// Standard errors of the reported MSEs and of their per-trial difference.
    pub mse_ls_se: f64,
    pub mse_mmse_se: f64,
    pub mse_gap_se: f64,
}

impl MetricsRecord {
    /// 95% normal-approximation half-width of the BER.
    pub fn ber_half_width(&self) -> f64 {
        if self.bits == 0 {
            return f64::NAN;
        }
        1.96 * (self.ber * (1.0 - self.ber) / self.bits as f64).sqrt()
    }

    /// MMSE error not above LS error, up to `sigmas` standard errors of the
    /// paired difference.
    pub fn mmse_dominates(&self, sigmas: f64) -> bool {
        let slack = if self.mse_gap_se.is_finite() {
            sigmas * self.mse_gap_se
        } else {
            0.0
        };
        self.mse_mmse <= self.mse_ls + slack
    }
}

/// Everything about a link that is fixed for a whole sweep.
#[derive(Debug, Clone)]
pub struct Link {
    config: SimConfig,
    model: ChannelModel,
    r_h: CMat,
    modem: Modem,
    codes: Vec<SpreadingCode>,
    training: TrainingMatrix,
    ls: Option<LinearEstimator>,
    pilot_bins: Vec<usize>,
    data_bins: Vec<usize>,
    spreading_blocks: usize,
    /// First data-bearing symbol of the frame.
    first_data_symbol: usize,
    dft: Option<DftInterpolator>,
}

/// Per-SNR-point quantities shared by all trials at that point.
#[derive(Debug, Clone)]
pub struct PointContext {
    pub index: u64,
    pub snr_db: f64,
    pub noise: NoiseSpec,
    /// `ρ` handed to the MMSE estimator.
    pub rho: f64,
    mmse: Option<LinearEstimator>,
    /// Analytic total MMSE error (not normalized).
    pub theory: Option<f64>,
}

impl Link {
    pub fn new(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let model = config.channel_model()?;
        let r_h = model.correlation_matrix();
        let modem = Modem::new(config.n_fft, config.cp_len)?;
        let codes = walsh_hadamard_set(config.pg)?
            .into_iter()
            .take(config.users)
            .collect();
        let (training, pilot_bins, data_bins, first_data_symbol) = match config.layout {
            PilotLayout::Block { .. } => (
                design_training(config.n_t, config.training_len)?,
                Vec::new(),
                (0..config.n_sc).collect::<Vec<_>>(),
                config.training_len,
            ),
            PilotLayout::Comb { pilots } => {
                let pilot_bins = comb_pilot_positions(config.n_sc, pilots)?;
                let data_bins = (0..config.n_sc)
                    .filter(|k| pilot_bins.binary_search(k).is_err())
                    .collect();
                (
                    design_training(config.n_t, config.block_length)?,
                    pilot_bins,
                    data_bins,
                    0,
                )
            }
        };
        let spreading_blocks = data_bins.len() / config.pg;
        let ls = if config.estimators.includes(Estimator::Ls) {
            Some(LinearEstimator::ls(&training)?)
        } else {
            None
        };
        let dft = match (config.layout, config.interpolation) {
            (PilotLayout::Comb { pilots }, Interpolation::DftTruncated { kept_taps }) => {
                Some(DftInterpolator::new(pilots, config.n_sc, kept_taps)?)
            }
            _ => None,
        };
        Ok(Self {
            config: config.clone(),
            model,
            r_h,
            modem,
            codes,
            training,
            ls,
            pilot_bins,
            data_bins,
            spreading_blocks,
            first_data_symbol,
            dft,
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn training(&self) -> &TrainingMatrix {
        &self.training
    }

    pub fn correlation_matrix(&self) -> &CMat {
        &self.r_h
    }

    pub fn data_symbols(&self) -> usize {
        self.config.block_length - self.first_data_symbol
    }

    /// Bits carried by one frame.
    pub fn bits_per_frame(&self) -> usize {
        self.data_symbols()
            * self.config.n_t
            * self.spreading_blocks
            * self.config.users
            * self.config.scheme.bits_per_symbol()
    }

    pub fn point(&self, index: usize) -> Result<PointContext> {
        let snr_db =
            *self.config.snr_grid_db.get(index).ok_or_else(|| {
                Error::InvalidConfig(format!("SNR point {index} outside the grid"))
            })?;
        self.point_at(index as u64, snr_db)
    }

    fn point_at(&self, index: u64, snr_db: f64) -> Result<PointContext> {
        let noise = self.config.noise_at(snr_db)?;
        let rho = mmse_rho_for_noise(noise.variance(), self.config.n_t, self.config.n_r);
        let (mmse, theory) = if self.config.estimators.includes(Estimator::Mmse) {
            (
                Some(LinearEstimator::mmse(
                    &self.training,
                    &self.r_h,
                    rho,
                    self.config.n_t,
                )?),
                Some(mmse_error_analytic(
                    &self.r_h,
                    &self.training,
                    rho,
                    self.config.n_t,
                )?),
            )
        } else {
            (None, None)
        };
        Ok(PointContext {
            index,
            snr_db,
            noise,
            rho,
            mmse,
            theory,
        })
    }

    fn build_frame<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<(Frame, Vec<Vec<u8>>)> {
        let cfg = &self.config;
        let mut frame = Frame::new(cfg.n_sc, cfg.block_length, cfg.n_t, cfg.n_fft, cfg.cp_len)?;
        let p = self.training.matrix();
        match cfg.layout {
            PilotLayout::Block { .. } => {
                for n in 0..cfg.training_len {
                    for k in 0..cfg.n_sc {
                        frame.mark_pilot(k, n);
                        for a in 0..cfg.n_t {
                            frame.set(k, n, a, p[(a, n)]);
                        }
                    }
                }
            }
            PilotLayout::Comb { .. } => {
                for t in 0..cfg.block_length {
                    for &k in &self.pilot_bins {
                        frame.mark_pilot(k, t);
                        for a in 0..cfg.n_t {
                            frame.set(k, t, a, p[(a, t)]);
                        }
                    }
                }
            }
        }

        // sent[(t * n_t + a) * blocks + b][u]
        let user_scale = 1.0 / (cfg.users as f64).sqrt();
        let bps = cfg.scheme.bits_per_symbol();
        let mut sent_bits = Vec::new();
        let mut bits = vec![0u8; bps * cfg.users];
        for t in self.first_data_symbol..cfg.block_length {
            for a in 0..cfg.n_t {
                for b in 0..self.spreading_blocks {
                    bits.iter_mut()
                        .for_each(|bit| *bit = u8::from(rng.random::<bool>()));
                    let symbols = map_symbols(&bits, cfg.scheme)?;
                    for j in 0..cfg.pg {
                        let chip: Complex64 = symbols
                            .iter()
                            .zip(&self.codes)
                            .map(|(s, c)| s * f64::from(c.chips()[j]))
                            .sum();
                        frame.set(self.data_bins[b * cfg.pg + j], t, a, chip * user_scale);
                    }
                    sent_bits.push(bits.clone());
                }
            }
        }
        Ok((frame, sent_bits))
    }

    /// Received grid `rx[r][t][k]` after the time-domain channel and noise.
    fn transmit<R: Rng + ?Sized>(
        &self,
        frame: &Frame,
        channel: &ChannelRealization,
        noise: NoiseSpec,
        rng: &mut R,
    ) -> Result<Vec<Vec<Vec<Complex64>>>> {
        let cfg = &self.config;
        let streams = (0..cfg.n_t)
            .map(|a| frame.modulate_antenna(&self.modem, a))
            .collect::<Result<Vec<_>>>()?;
        let mut rx = channel.convolve(&streams)?;
        for stream in &mut rx {
            noise.add_to(stream, rng);
        }
        let sym = self.modem.symbol_len();
        rx.iter()
            .map(|stream| {
                (0..cfg.block_length)
                    .map(|t| {
                        self.modem
                            .demodulate(&stream[t * sym..(t + 1) * sym], cfg.n_sc)
                    })
                    .collect()
            })
            .collect()
    }

    fn observation(&self, rx: &[Vec<Vec<Complex64>>], k: usize, symbols: usize) -> CMat {
        CMat::from_fn(self.config.n_r, symbols, |r, t| rx[r][t][k])
    }

    fn estimate(
        &self,
        estimator: &LinearEstimator,
        rx: &[Vec<Vec<Complex64>>],
    ) -> Result<ChannelEstimate> {
        let cfg = &self.config;
        let per_subcarrier = match cfg.layout {
            PilotLayout::Block { .. } => (0..cfg.n_sc)
                .map(|k| estimator.apply(&self.observation(rx, k, cfg.training_len)))
                .collect::<Result<Vec<_>>>()?,
            PilotLayout::Comb { .. } => {
                let at_pilots = self
                    .pilot_bins
                    .iter()
                    .map(|&k| estimator.apply(&self.observation(rx, k, cfg.block_length)))
                    .collect::<Result<Vec<_>>>()?;
                match (&self.dft, cfg.interpolation) {
                    (Some(dft), _) => dft.interpolate(&at_pilots)?,
                    (None, Interpolation::Linear) => interpolate_linear(&at_pilots, cfg.n_sc)?,
                    _ => unreachable!("validated in SimConfig::validate"),
                }
            }
        };
        Ok(ChannelEstimate {
            per_subcarrier,
            estimator: estimator.kind(),
            interpolation: cfg.interpolation,
            layout: cfg.layout,
        })
    }

    /// Per-subcarrier MIMO combiner rows and the effective gain each
    /// transmit antenna sees through them.
    fn combiner(&self, h: &CMat, noise_var: f64) -> (CMat, Vec<Complex64>) {
        let n_t = self.config.n_t;
        let w = match self.config.combiner {
            Combiner::Mmse | Combiner::ZeroForcing => {
                let reg = if self.config.combiner == Combiner::Mmse {
                    noise_var
                } else {
                    0.0
                };
                let gram = h.adjoint() * h + scaled_identity(n_t, reg);
                match gram.try_inverse() {
                    Some(inv) => inv * h.adjoint(),
                    None => CMat::zeros(n_t, self.config.n_r),
                }
            }
            Combiner::EqualGain => {
                let mut w = h.adjoint();
                for a in 0..n_t {
                    let norm = w.row(a).iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                    if norm > 0.0 {
                        w.row_mut(a).iter_mut().for_each(|z| *z /= norm);
                    }
                }
                w
            }
        };
        let eff = &w * h;
        let gains = (0..n_t).map(|a| eff[(a, a)]).collect();
        (w, gains)
    }

    pub fn run_trial(&self, point: &PointContext, trial: u64) -> Result<TrialContribution> {
        let stage = |stage: &'static str| {
            move |e: Error| Error::Trial {
                snr_db: point.snr_db,
                trial,
                stage,
                source: Box::new(e),
            }
        };
        let cfg = &self.config;
        let mut rng = trial_rng(cfg.master_seed, point.index, trial);
        let channel = draw_channel(&self.model, &mut rng);
        let (frame, sent_bits) = self.build_frame(&mut rng).map_err(stage("transmit"))?;
        let rx = self
            .transmit(&frame, &channel, point.noise, &mut rng)
            .map_err(stage("channel"))?;

        let truth = channel
            .frequency_response(cfg.n_fft, &(0..cfg.n_sc).collect::<Vec<_>>())
            .map_err(stage("channel"))?;
        let scale = 1.0 / cfg.n_sc as f64;
        let ls = self
            .ls
            .as_ref()
            .map(|e| self.estimate(e, &rx))
            .transpose()
            .map_err(stage("estimation"))?;
        let mmse = point
            .mmse
            .as_ref()
            .map(|e| self.estimate(e, &rx))
            .transpose()
            .map_err(stage("estimation"))?;
        let sq_err = |est: &Option<ChannelEstimate>| -> Result<Option<f64>> {
            est.as_ref()
                .map(|e| e.squared_error(&truth).map(|s| s * scale))
                .transpose()
        };
        let sq_err_ls = sq_err(&ls).map_err(stage("estimation"))?;
        let sq_err_mmse = sq_err(&mmse).map_err(stage("estimation"))?;

        let csi: &[CMat] = match cfg.csi {
            CsiSource::Perfect => &truth,
            CsiSource::Estimated(Estimator::Ls) => &ls.as_ref().expect("validated").per_subcarrier,
            CsiSource::Estimated(Estimator::Mmse) => {
                &mmse.as_ref().expect("validated").per_subcarrier
            }
        };
        let (bit_errors, symbol_errors) = self
            .detect(csi, &rx, point.noise.variance(), &sent_bits)
            .map_err(stage("detection"))?;
        let symbols = sent_bits.len() as u64 * cfg.users as u64;
        Ok(TrialContribution {
            bit_errors,
            bits: symbols * cfg.scheme.bits_per_symbol() as u64,
            symbol_errors,
            symbols,
            sq_err_ls,
            sq_err_mmse,
        })
    }

    fn detect(
        &self,
        csi: &[CMat],
        rx: &[Vec<Vec<Complex64>>],
        noise_var: f64,
        sent_bits: &[Vec<u8>],
    ) -> Result<(u64, u64)> {
        let cfg = &self.config;
        let g = cfg.pg;
        let bps = cfg.scheme.bits_per_symbol();
        let n_bins = self.spreading_blocks * g;
        let combiners: Vec<(CMat, Vec<Complex64>)> = self.data_bins[..n_bins]
            .iter()
            .map(|&k| self.combiner(&csi[k], noise_var))
            .collect();
        let ones = vec![ONE; g];
        let user_gain = (cfg.users as f64).sqrt();
        let mut bins = vec![vec![ZERO; n_bins]; cfg.n_t];
        let mut gains = vec![vec![ZERO; n_bins]; cfg.n_t];
        for (i, (_, gk)) in combiners.iter().enumerate() {
            for a in 0..cfg.n_t {
                gains[a][i] = gk[a];
            }
        }
        let mut y = CMat::zeros(cfg.n_r, 1);
        let (mut bit_errors, mut symbol_errors) = (0u64, 0u64);
        let mut sent = sent_bits.iter();
        for t in self.first_data_symbol..cfg.block_length {
            for (i, &k) in self.data_bins[..n_bins].iter().enumerate() {
                for r in 0..cfg.n_r {
                    y[(r, 0)] = rx[r][t][k];
                }
                let z = &combiners[i].0 * &y;
                for a in 0..cfg.n_t {
                    bins[a][i] = z[(a, 0)];
                }
            }
            for a in 0..cfg.n_t {
                for b in 0..self.spreading_blocks {
                    let range = b * g..(b + 1) * g;
                    let bits = sent.next().expect("one bit group per block");
                    for (u, code) in self.codes.iter().enumerate() {
                        let x = despread(
                            &bins[a][range.clone()],
                            code,
                            &ones,
                            &gains[a][range.clone()],
                        )? * user_gain;
                        let decided = cfg.scheme.demap(&[x]);
                        let truth = &bits[u * bps..(u + 1) * bps];
                        let wrong =
                            decided.iter().zip(truth).filter(|(d, s)| d != s).count() as u64;
                        bit_errors += wrong;
                        symbol_errors += u64::from(wrong > 0);
                    }
                }
            }
        }
        Ok((bit_errors, symbol_errors))
    }

    fn run_chunk(&self, point: &PointContext, chunk: u64) -> Result<Accumulator> {
        let start = chunk * CHUNK_TRIALS;
        let end = (start + CHUNK_TRIALS).min(self.config.trials);
        let mut acc = Accumulator::default();
        for trial in start..end {
            acc.push(&self.run_trial(point, trial)?);
        }
        Ok(acc)
    }

    fn record(&self, point: &PointContext, acc: &Accumulator) -> MetricsRecord {
        let cfg = &self.config;
        let norm = if cfg.mse_normalized {
            1.0 / (cfg.n_r * cfg.n_t) as f64
        } else {
            1.0
        };
        let n = acc.trials;
        let ls_on = cfg.estimators.includes(Estimator::Ls);
        let mmse_on = cfg.estimators.includes(Estimator::Mmse);
        let pick = |on: bool, v: f64| if on { v } else { f64::NAN };
        MetricsRecord {
            snr_db: point.snr_db,
            mse_ls: pick(ls_on, acc.ls.mean(n) * norm),
            mse_mmse: pick(mmse_on, acc.mmse.mean(n) * norm),
            mse_theory: point.theory.map_or(f64::NAN, |t| t * norm),
            ber: acc.bit_errors as f64 / acc.bits as f64,
            ser: acc.symbol_errors as f64 / acc.symbols as f64,
            bit_errors: acc.bit_errors,
            bits: acc.bits,
            symbol_errors: acc.symbol_errors,
            symbols: acc.symbols,
            trials: n,
            mse_ls_raw: pick(ls_on, acc.ls.mean(n)),
            mse_mmse_raw: pick(mmse_on, acc.mmse.mean(n)),
            mse_ls_se: pick(ls_on, acc.ls.std_error(n) * norm),
            mse_mmse_se: pick(mmse_on, acc.mmse.std_error(n) * norm),
            mse_gap_se: pick(ls_on && mmse_on, acc.gap.std_error(n) * norm),
        }
    }

    pub fn run_point(&self, index: usize, execution: Execution) -> Result<MetricsRecord> {
        let point = self.point(index)?;
        let chunks = self.config.trials.div_ceil(CHUNK_TRIALS);
        let partials: Vec<Accumulator> = match execution {
            Execution::Sequential => (0..chunks)
                .map(|c| self.run_chunk(&point, c))
                .collect::<Result<_>>()?,
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..chunks)
                    .into_par_iter()
                    .map(|c| self.run_chunk(&point, c))
                    .collect::<Result<_>>()?
            }
        };
        let mut total = Accumulator::default();
        for p in &partials {
            total.merge(p);
        }
        Ok(self.record(&point, &total))
    }
}

/// How a sweep schedules its trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    #[cfg(feature = "parallel")]
    Parallel,
}

impl Default for Execution {
    fn default() -> Self {
        #[cfg(feature = "parallel")]
        {
            Execution::Parallel
        }
        #[cfg(not(feature = "parallel"))]
        {
            Execution::Sequential
        }
    }
}

/// One trial of `config` at grid point `point`.
pub fn run_trial(config: &SimConfig, point: usize, trial: u64) -> Result<TrialContribution> {
    let link = Link::new(config)?;
    let ctx = link.point(point)?;
    link.run_trial(&ctx, trial)
}

pub fn run_sweep(config: &SimConfig) -> Result<Vec<MetricsRecord>> {
    run_sweep_with(config, Execution::default())
}

pub fn run_sweep_with(config: &SimConfig, execution: Execution) -> Result<Vec<MetricsRecord>> {
    let link = Link::new(config)?;
    (0..config.snr_grid_db.len())
        .map(|i| {
            let rec = link.run_point(i, execution)?;
            log::info!(
                "snr {:>6.2} dB: mse_ls {:.4e} (raw {:.4e} ± {:.1e}) mse_mmse {:.4e} (raw {:.4e} ± {:.1e}) theory {:.4e} ber {:.4e} ± {:.1e} ser {:.4e}",
                rec.snr_db,
                rec.mse_ls,
                rec.mse_ls_raw,
                1.96 * rec.mse_ls_se,
                rec.mse_mmse,
                rec.mse_mmse_raw,
                1.96 * rec.mse_mmse_se,
                rec.mse_theory,
                rec.ber,
                rec.ber_half_width(),
                rec.ser
            );
            Ok(rec)
        })
        .collect()
}

/// BPSK average bit error rate over flat Rayleigh fading:
/// `0.5 · (1 − sqrt(γ / (1 + γ)))` with `γ = 10^(snr_db / 10)`.
pub fn ber_reference_rayleigh(snr_db: f64) -> f64 {
    let g = 10f64.powf(snr_db / 10.0);
    0.5 * (1.0 - (g / (1.0 + g)).sqrt())
}

/// Direct Monte-Carlo of `Y = H·P + V` with i.i.d. flat Rayleigh `H` and
/// orthogonal training, without any waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExperiment {
    pub m_t: usize,
    pub m_r: usize,
    pub n: usize,
    pub noise_var: f64,
    pub trials: u64,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainingOutcome {
    /// Empirical `E‖H − Ĥ‖_F²`.
    pub mse_ls: f64,
    pub mse_mmse: f64,
    /// `ρ` handed to the MMSE estimator.
    pub rho: f64,
    pub theory_mmse: f64,
    /// `tr{(P·P^H)^{-1}} · M_r · σ²`.
    pub theory_ls: f64,
}

impl TrainingExperiment {
    pub fn run(&self, execution: Execution) -> Result<TrainingOutcome> {
        let p = design_training(self.m_t, self.n)?;
        let model = ChannelModel::flat(self.m_t, self.m_r)?;
        let r_h = model.correlation_matrix();
        let noise = NoiseSpec::new(self.noise_var)?;
        let rho = mmse_rho_for_noise(self.noise_var, self.m_t, self.m_r);
        let ls = LinearEstimator::ls(&p)?;
        let mmse = LinearEstimator::mmse(&p, &r_h, rho, self.m_t)?;
        let theory_mmse = mmse_error_analytic(&r_h, &p, rho, self.m_t)?;
        let gram_inv = p
            .gram()
            .try_inverse()
            .ok_or(Error::SingularGram(f64::INFINITY))?;
        let theory_ls = gram_inv.trace().re * self.m_r as f64 * self.noise_var;

        let chunk = |c: u64| -> Result<(f64, f64)> {
            let start = c * CHUNK_TRIALS;
            let end = (start + CHUNK_TRIALS).min(self.trials);
            let (mut s_ls, mut s_mmse) = (0.0, 0.0);
            for trial in start..end {
                let mut rng = trial_rng(self.seed, u64::MAX, trial);
                let h = draw_channel(&model, &mut rng).flat_matrix().clone();
                let v = complex_gaussian_matrix(&mut rng, self.m_r, self.n, noise.variance());
                let y = &h * p.matrix() + v;
                s_ls += frobenius_sq(&(&h - ls.apply(&y)?));
                s_mmse += frobenius_sq(&(&h - mmse.apply(&y)?));
            }
            Ok((s_ls, s_mmse))
        };
        let chunks = self.trials.div_ceil(CHUNK_TRIALS);
        let partials: Vec<(f64, f64)> = match execution {
            Execution::Sequential => (0..chunks).map(chunk).collect::<Result<_>>()?,
            #[cfg(feature = "parallel")]
            Execution::Parallel => {
                use rayon::prelude::*;
                (0..chunks)
                    .into_par_iter()
                    .map(chunk)
                    .collect::<Result<_>>()?
            }
        };
        let (s_ls, s_mmse) = partials
            .iter()
            .fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
        let n = self.trials as f64;
        Ok(TrainingOutcome {
            mse_ls: s_ls / n,
            mse_mmse: s_mmse / n,
            rho,
            theory_mmse,
            theory_ls,
        })
    }
}
