//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::process::Command;
use std::time::Instant;

use mccdma::channel::{ChannelRealization, PowerDelayProfile};
use mccdma::codes::{generate_m_sequence, walsh_hadamard_set, LfsrSpec};
use mccdma::estimation::{
    design_training, estimate_ls, estimate_mmse, mmse_rho_for_noise, Interpolation, PilotLayout,
};
use mccdma::linalg::{complex_gaussian, complex_gaussian_matrix, scaled_identity, CMat};
use mccdma::simulate::{
    run_sweep, CsiSource, EstimatorSelection, Execution, MetricsRecord, SimConfig,
    TrainingExperiment,
};
use mccdma::waveform::{Modem, ModulationScheme};
use mccdma::{Complex64, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<(bool, String)>;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn preset_config(n_t: usize, n_r: usize, pg: usize) -> SimConfig {
    let mut c = SimConfig::new(n_t, n_r, pg);
    c.master_seed = 2024;
    c
}

/// Trace oracle: orthogonal training with `P·P^H = N·I` and `R_H = M_r·I`
/// diagonalise the MMSE core, so the trace is a sum of scalar inverses.
fn trace_oracle(m_t: usize, m_r: usize, n: usize, rho: f64) -> f64 {
    m_t as f64 / (1.0 / m_r as f64 + rho / m_t as f64 * n as f64)
}

fn training_experiment() -> Result<(mccdma::simulate::TrainingOutcome, f64)> {
    let start = Instant::now();
    let out = TrainingExperiment {
        m_t: 2,
        m_r: 2,
        n: 32,
        noise_var: 1.0,
        trials: 100_000,
        seed: 11,
    }
    .run(Execution::default())?;
    Ok((out, start.elapsed().as_secs_f64()))
}

fn criterion_1() -> Outcome {
    let (out, secs) = training_experiment()?;
    let expected = trace_oracle(2, 2, 32, 1.0);
    let err = rel(out.mse_mmse, expected);
    Ok((
        (out.rho - 1.0).abs() < 1e-12 && err < 0.03 && secs < 60.0,
        format!(
            "empirical {:.5}, oracle 2/16.5 = {expected:.5}, rel err {:.2}%, {secs:.1}s",
            out.mse_mmse,
            100.0 * err
        ),
    ))
}

fn criterion_2() -> Outcome {
    let (out, _) = training_experiment()?;
    let expected = 2.0 * 2.0 * 1.0 / 32.0;
    let err = rel(out.mse_ls, expected);
    Ok((
        err < 0.03,
        format!(
            "empirical {:.5}, oracle {expected:.5}, rel err {:.2}%",
            out.mse_ls,
            100.0 * err
        ),
    ))
}

fn criterion_3() -> Outcome {
    let mut notes = Vec::new();
    let mut ok = true;
    for (name, n_r, pg) in [
        ("fig4", 2, 32),
        ("fig5", 2, 16),
        ("fig6", 3, 32),
        ("fig7", 4, 32),
    ] {
        let mut c = preset_config(2, n_r, pg);
        c.trials = 10_000;
        let records = run_sweep(&c)?;
        let mut worst = f64::NEG_INFINITY;
        for r in &records {
            ok &= r.mmse_dominates(2.0);
            worst = worst.max((r.mse_mmse - r.mse_ls) / r.mse_gap_se.max(f64::MIN_POSITIVE));
        }
        notes.push(format!("{name} max (mmse-ls)/se {worst:.1}"));
    }
    Ok((ok, notes.join(", ")))
}

fn criterion_4() -> Outcome {
    let mut bers = Vec::new();
    let mut min_bits = u64::MAX;
    for n_r in [2, 3, 4] {
        let mut c = preset_config(2, n_r, 32);
        c.estimators = EstimatorSelection::Mmse;
        c.csi = CsiSource::Estimated(mccdma::estimation::Estimator::Mmse);
        c.snr_grid_db = vec![10.0];
        c.trials = 2_000;
        let r = &run_sweep(&c)?[0];
        min_bits = min_bits.min(r.bits);
        bers.push(r.ber);
    }
    Ok((
        bers[2] <= bers[1] && bers[1] <= bers[0] && min_bits >= 100_000,
        format!(
            "BER n_r=2 {:.3e}, n_r=3 {:.3e}, n_r=4 {:.3e}, {min_bits} bits per point",
            bers[0], bers[1], bers[2]
        ),
    ))
}

fn rayleigh_bpsk_oracle(snr_db: f64) -> f64 {
    let g = 10f64.powf(snr_db / 10.0);
    0.5 * (1.0 - (g / (1.0 + g)).sqrt())
}

fn criterion_5() -> Outcome {
    // one subcarrier, one data bit per fade: every bit sees an independent channel
    let mut c = SimConfig::new(1, 1, 1);
    c.users = 1;
    c.n_fft = 1;
    c.n_sc = 1;
    c.cp_len = 0;
    c.scheme = ModulationScheme::Bpsk;
    c.block_length = 2;
    c.training_len = 1;
    c.layout = PilotLayout::Block { period: 2 };
    c.csi = CsiSource::Perfect;
    c.trials = 1_000_000;
    c.master_seed = 5;
    let records = run_sweep(&c)?;
    let mut ok = records.iter().all(|r| r.bits >= 1_000_000);
    let mut notes = Vec::new();
    for r in records.iter() {
        let oracle = rayleigh_bpsk_oracle(r.snr_db);
        if r.ber >= 1e-3 {
            let err = rel(r.ber, oracle);
            ok &= err < 0.05;
            notes.push(format!("{}dB {:.2}%", r.snr_db, 100.0 * err));
        }
    }
    Ok((
        ok,
        format!("rel err where BER >= 1e-3: {}", notes.join(", ")),
    ))
}

fn criterion_6() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst: f64 = 0.0;
    // estimator level with exactly zero noise
    for (m_t, m_r, n) in [(1, 1, 1), (2, 2, 2), (2, 4, 8), (4, 3, 16)] {
        let p = design_training(m_t, n)?;
        let h = complex_gaussian_matrix(&mut rng, m_r, m_t, 1.0);
        let y = &h * p.matrix();
        let rho = mmse_rho_for_noise(0.0, m_t, m_r);
        let r_h = scaled_identity(m_t, m_r as f64);
        for est in [estimate_ls(&y, &p)?, estimate_mmse(&y, &p, &r_h, rho, m_t)?] {
            worst = worst.max((&h - est).iter().map(|z| z.norm()).fold(0.0, f64::max));
        }
    }
    // full link: one channel per block, block pilots, negligible noise
    let mut link_worst: f64 = 0.0;
    for profile in [
        PowerDelayProfile::Flat,
        PowerDelayProfile::Exponential {
            taps: 4,
            decay: 0.5,
        },
    ] {
        let mut c = preset_config(2, 2, 32);
        c.profile = profile;
        c.snr_grid_db = vec![300.0];
        c.trials = 50;
        c.mse_normalized = false;
        let r = &run_sweep(&c)?[0];
        link_worst = link_worst.max(r.mse_ls).max(r.mse_mmse);
    }
    Ok((
        worst < 1e-10 && link_worst < 1e-10,
        format!("max |H - Ĥ| {worst:.1e}, link mean ‖H - Ĥ‖² {link_worst:.1e}"),
    ))
}

fn criterion_7() -> Outcome {
    for m in 2..=10usize {
        let code = generate_m_sequence(&LfsrSpec::primitive(m)?)?;
        let chips: Vec<i64> = code.chips().iter().map(|&c| c as i64).collect();
        let g = (1usize << m) - 1;
        if chips.len() != g {
            return Ok((false, format!("m={m}: period {}", chips.len())));
        }
        let minus = chips.iter().filter(|&&c| c == -1).count();
        if minus != 1 << (m - 1) {
            return Ok((false, format!("m={m}: {minus} ones")));
        }
        for lag in 0..g {
            let r: i64 = (0..g).map(|i| chips[i] * chips[(i + lag) % g]).sum();
            let want = if lag == 0 { g as i64 } else { -1 };
            if r != want {
                return Ok((false, format!("m={m} lag {lag}: {r}")));
            }
        }
    }
    for n in [1usize, 2, 4, 8, 16, 32, 64, 128] {
        let set = walsh_hadamard_set(n)?;
        for (i, a) in set.iter().enumerate() {
            for (j, b) in set.iter().enumerate() {
                let dot: i64 = a
                    .chips()
                    .iter()
                    .zip(b.chips())
                    .map(|(&x, &y)| x as i64 * y as i64)
                    .sum();
                if dot != if i == j { n as i64 } else { 0 } {
                    return Ok((false, format!("Walsh order {n} rows {i},{j}: {dot}")));
                }
            }
        }
    }
    Ok((
        true,
        "m = 2..10 exact, Walsh orders 1..128 Gram = n·I".into(),
    ))
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let (mut round, mut conv): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let n = [8, 16, 64, 256][rng.random_range(0..4)];
        let cp = [0, n / 8, n / 4][rng.random_range(0..3)];
        let modem = Modem::new(n, cp)?;
        let x: Vec<Complex64> = (0..n).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
        let back = modem.demodulate(&modem.modulate(&x)?, n)?;
        round = round.max(
            x.iter()
                .zip(&back)
                .map(|(a, b)| (a - b).norm())
                .fold(0.0, f64::max),
        );

        // two back-to-back symbols through a channel no longer than the prefix
        let taps = rng.random_range(1..=cp + 1);
        let h: Vec<Complex64> = (0..taps)
            .map(|_| complex_gaussian(&mut rng, 1.0 / taps as f64))
            .collect();
        let channel = ChannelRealization::from_taps(
            h.iter().map(|&v| CMat::from_element(1, 1, v)).collect(),
        )?;
        let symbols: Vec<Vec<Complex64>> = (0..2)
            .map(|_| (0..n).map(|_| complex_gaussian(&mut rng, 1.0)).collect())
            .collect();
        let mut stream = modem.modulate(&symbols[0])?;
        stream.extend(modem.modulate(&symbols[1])?);
        let rx = channel.convolve(&[stream])?.remove(0);
        let len = modem.symbol_len();
        for (s, sym) in symbols.iter().enumerate() {
            let y = modem.demodulate(&rx[s * len..(s + 1) * len], n)?;
            for k in 0..n {
                let hk: Complex64 = h
                    .iter()
                    .enumerate()
                    .map(|(l, &v)| {
                        v * Complex64::from_polar(
                            1.0,
                            -2.0 * std::f64::consts::PI * (k * l) as f64 / n as f64,
                        )
                    })
                    .sum();
                conv = conv.max((y[k] - hk * sym[k]).norm());
            }
        }
    }
    Ok((
        round < 1e-12 && conv < 1e-10,
        format!("roundtrip max err {round:.1e}, circular convolution max err {conv:.1e}"),
    ))
}

fn criterion_9() -> Outcome {
    let run = |interp: Interpolation| -> Result<MetricsRecord> {
        let mut c = preset_config(2, 2, 8);
        c.n_fft = 64;
        c.n_sc = 64;
        c.cp_len = 8;
        c.profile = PowerDelayProfile::Exponential {
            taps: 4,
            decay: 0.5,
        };
        c.layout = PilotLayout::Comb { pilots: 8 };
        c.interpolation = interp;
        c.snr_grid_db = vec![0.0];
        c.trials = 1_000;
        Ok(run_sweep(&c)?.remove(0))
    };
    let dft = run(Interpolation::DftTruncated { kept_taps: 4 })?;
    let lin = run(Interpolation::Linear)?;
    Ok((
        dft.mse_ls < lin.mse_ls && dft.mse_mmse < lin.mse_mmse,
        format!(
            "LS: dft {:.4} vs linear {:.4}; MMSE: dft {:.4} vs linear {:.4}",
            dft.mse_ls, lin.mse_ls, dft.mse_mmse, lin.mse_mmse
        ),
    ))
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| mccdma::Error::Io {
        path: "tempdir".into(),
        source: e,
    })?;
    let mut rows = Vec::new();
    for i in 0..2 {
        let out = dir.path().join(format!("fig4_{i}.csv"));
        let status = Command::new(env!("CARGO_BIN_EXE_mccdma"))
            .args(["sweep", "--preset", "fig4", "--seed", "42", "--out"])
            .arg(&out)
            .env("RUST_LOG", "warn")
            .status()
            .map_err(|e| mccdma::Error::Io {
                path: "mccdma".into(),
                source: e,
            })?;
        if !status.success() {
            return Ok((false, format!("run {i} exited with {status}")));
        }
        let text = std::fs::read_to_string(&out).map_err(|e| mccdma::Error::Io {
            path: out.display().to_string(),
            source: e,
        })?;
        rows.push(
            text.lines()
                .filter(|l| !l.starts_with('#'))
                .map(str::to_string)
                .collect::<Vec<_>>(),
        );
    }
    Ok((
        rows[0] == rows[1] && rows[0].len() == 8,
        format!("{} data rows compared", rows[0].len().saturating_sub(1)),
    ))
}

fn main() {
    // `cargo test -- --list` and friends pass libtest flags; nothing to list here
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 MMSE training error matches trace formula", criterion_1),
        ("2 LS training error matches closed form", criterion_2),
        ("3 MMSE no worse than LS for fig4-fig7", criterion_3),
        ("4 BER falls as receive antennas grow", criterion_4),
        ("5 BPSK Rayleigh BER oracle", criterion_5),
        ("6 noiseless estimation is exact", criterion_6),
        ("7 spreading code properties", criterion_7),
        ("8 modem roundtrip and cyclic prefix", criterion_8),
        ("9 DFT interpolation beats linear at 0 dB", criterion_9),
        ("10 sweep CSV is reproducible", criterion_10),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let (passed, detail) = match check() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!passed);
        println!(
            "{} criterion {name}: {detail} [{:.1}s]",
            if passed { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
    println!("all acceptance criteria passed");
}
