//! Quick invariant checks runnable from the command line.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::codes::{generate_m_sequence, periodic_correlation, walsh_hadamard_set, LfsrSpec};
use crate::estimation::{design_training, mmse_error_analytic};
use crate::linalg::{complex_gaussian, scaled_identity};
use crate::simulate::{run_sweep_with, CsiSource, Execution, SimConfig};
use crate::waveform::Modem;
use crate::{Complex64, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<(bool, String)>) -> CheckResult {
    match outcome {
        Ok((passed, detail)) => CheckResult {
            name,
            passed,
            detail,
        },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

fn m_sequences() -> Result<(bool, String)> {
    for m in 2..=10 {
        let code = generate_m_sequence(&LfsrSpec::primitive(m)?)?;
        let n = (1usize << m) - 1;
        let sum: i64 = code.chips().iter().map(|&c| c as i64).sum();
        let off_peak_ok = (1..n).all(|k| matches!(periodic_correlation(&code, &code, k), Ok(-1)));
        if code.len() != n || sum != -1 || !off_peak_ok {
            return Ok((
                false,
                format!("degree {m} fails period/balance/correlation"),
            ));
        }
    }
    Ok((true, "degrees 2..=10".into()))
}

fn walsh() -> Result<(bool, String)> {
    let set = walsh_hadamard_set(64)?;
    for i in 0..set.len() {
        for j in 0..set.len() {
            let c = periodic_correlation(&set[i], &set[j], 0)?;
            if c != if i == j { 64 } else { 0 } {
                return Ok((false, format!("rows {i},{j} correlate to {c}")));
            }
        }
    }
    Ok((true, "order 64 orthogonal".into()))
}

fn modem_roundtrip() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for n in [8, 16, 64, 256] {
        for cp in [0, n / 8, n / 4] {
            let modem = Modem::new(n, cp)?;
            let x: Vec<Complex64> = (0..n).map(|_| complex_gaussian(&mut rng, 1.0)).collect();
            let s = modem.modulate(&x)?;
            if s[..cp] != s[n..] {
                return Ok((false, format!("prefix mismatch at n_fft={n} cp={cp}")));
            }
            let back = modem.demodulate(&s, n)?;
            for (a, b) in x.iter().zip(&back) {
                worst = worst.max((a - b).norm());
            }
        }
    }
    Ok((worst < 1e-10, format!("max error {worst:.2e}")))
}

fn analytic_mmse() -> Result<(bool, String)> {
    // orthogonal training and white R_H: every eigenvalue is 1/r + (ρ/M_t)·g
    let p = design_training(2, 16)?;
    let r_h = scaled_identity(2, 2.0);
    let j = mmse_error_analytic(&r_h, &p, 1.0, 2)?;
    let g = p.gram()[(0, 0)].re;
    let expected = 2.0 / (0.5 + 0.5 * g);
    let err = (j - expected).abs();
    Ok((err < 1e-12, format!("J = {j:.6}, expected {expected:.6}")))
}

fn noiseless_link() -> Result<(bool, String)> {
    let mut c = SimConfig::new(2, 2, 8);
    c.snr_grid_db = vec![300.0];
    c.trials = 8;
    c.csi = CsiSource::Perfect;
    let rec = &run_sweep_with(&c, Execution::Sequential)?[0];
    Ok((
        rec.bit_errors == 0 && rec.mse_ls < 1e-20,
        format!("{} bit errors in {} bits", rec.bit_errors, rec.bits),
    ))
}

fn determinism() -> Result<(bool, String)> {
    let mut c = SimConfig::new(2, 2, 8);
    c.snr_grid_db = vec![0.0, 10.0];
    c.trials = 130;
    let a = run_sweep_with(&c, Execution::Sequential)?;
    let b = run_sweep_with(&c, Execution::default())?;
    let same = a.iter().zip(&b).all(|(x, y)| {
        x.bit_errors == y.bit_errors
            && x.mse_ls.to_bits() == y.mse_ls.to_bits()
            && x.mse_mmse.to_bits() == y.mse_mmse.to_bits()
    });
    Ok((same, "sequential vs default execution".into()))
}

pub fn run_all() -> Vec<CheckResult> {
    vec![
        check("m-sequences", m_sequences()),
        check("walsh-orthogonality", walsh()),
        check("modem-roundtrip", modem_roundtrip()),
        check("mmse-closed-form", analytic_mmse()),
        check("noiseless-link", noiseless_link()),
        check("determinism", determinism()),
    ]
}
