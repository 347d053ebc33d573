//! Spreading sequences: maximal-length PN sequences and Walsh–Hadamard sets.
//!
//! m-sequences come from a Fibonacci (external XOR) shift register. Stage 1
//! receives the feedback bit, stage `m` is the output. A tap set `{t1, t2, ..}`
//! means the feedback is the XOR of those stages, i.e. the connection
//! polynomial `1 + x^t1 + x^t2 + ..`. Output bits map 0 → +1 and 1 → −1.

use std::fmt;

use crate::{Error, Result};

/// Largest supported register length. One full period is materialized.
pub const MAX_DEGREE: usize = 20;

/// Known-primitive tap sets for degrees 2 through 10.
const PRIMITIVE_TAPS: [&[usize]; 9] = [
    &[2, 1],
    &[3, 2],
    &[4, 3],
    &[5, 3],
    &[6, 5],
    &[7, 6],
    &[8, 6, 5, 4],
    &[9, 5],
    &[10, 7],
];

/// Primitive tap set for `degree` in 2..=10, if tabulated.
pub fn primitive_taps(degree: usize) -> Option<&'static [usize]> {
    degree
        .checked_sub(2)
        .and_then(|i| PRIMITIVE_TAPS.get(i))
        .copied()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LfsrSpec {
    degree: usize,
    taps: Vec<usize>,
    seed: Vec<u8>,
}

impl LfsrSpec {
    /// `seed[i]` is the initial content of stage `i + 1`. An all-zero seed is
    /// accepted here and rejected at generation time with [`Error::ZeroSeed`].
    pub fn new(degree: usize, taps: &[usize], seed: &[u8]) -> Result<Self> {
        if !(2..=MAX_DEGREE).contains(&degree) {
            return Err(Error::InvalidLfsr(format!(
                "degree {degree} outside 2..={MAX_DEGREE}"
            )));
        }
        if taps.iter().any(|&t| t == 0 || t > degree) {
            return Err(Error::InvalidLfsr(format!(
                "taps {taps:?} must lie in 1..={degree}"
            )));
        }
        if !taps.contains(&degree) {
            return Err(Error::InvalidLfsr(format!(
                "taps {taps:?} must include stage {degree}"
            )));
        }
        if seed.len() != degree {
            return Err(Error::InvalidLfsr(format!(
                "seed has {} bits, register has {degree} stages",
                seed.len()
            )));
        }
        if seed.iter().any(|&b| b > 1) {
            return Err(Error::InvalidLfsr("seed bits must be 0 or 1".into()));
        }
        let mut taps = taps.to_vec();
        taps.sort_unstable();
        taps.dedup();
        Ok(Self {
            degree,
            taps,
            seed: seed.to_vec(),
        })
    }

    /// Tabulated primitive taps with the seed `00..01`.
    pub fn primitive(degree: usize) -> Result<Self> {
        let taps = primitive_taps(degree).ok_or_else(|| {
            Error::InvalidLfsr(format!(
                "no tabulated primitive polynomial for degree {degree}"
            ))
        })?;
        let mut seed = vec![0; degree];
        seed[degree - 1] = 1;
        Self::new(degree, taps, &seed)
    }

    pub fn with_seed(&self, seed: &[u8]) -> Result<Self> {
        Self::new(self.degree, &self.taps, seed)
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn taps(&self) -> &[usize] {
        &self.taps
    }

    pub fn seed(&self) -> &[u8] {
        &self.seed
    }

    pub fn period(&self) -> usize {
        (1 << self.degree) - 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CodeFamily {
    MSequence,
    Walsh,
}

impl fmt::Display for CodeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CodeFamily::MSequence => f.write_str("m-sequence"),
            CodeFamily::Walsh => f.write_str("walsh"),
        }
    }
}

/// A ±1 chip sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpreadingCode {
    chips: Vec<i8>,
    family: CodeFamily,
    index: usize,
}

impl SpreadingCode {
    pub fn chips(&self) -> &[i8] {
        &self.chips
    }

    pub fn family(&self) -> CodeFamily {
        self.family
    }

    pub fn index(&self) -> usize {
        self.index
    }

    /// Processing gain G.
    pub fn len(&self) -> usize {
        self.chips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.chips.is_empty()
    }

    /// Number of −1 chips.
    pub fn ones(&self) -> usize {
        self.chips.iter().filter(|&&c| c < 0).count()
    }

    /// Cyclic shift left by `k` chips.
    pub fn rotated(&self, k: usize) -> SpreadingCode {
        let mut chips = self.chips.clone();
        if !chips.is_empty() {
            chips.rotate_left(k % self.chips.len());
        }
        SpreadingCode { chips, ..*self }
    }
}

/// One full period of the m-sequence defined by `spec`.
pub fn generate_m_sequence(spec: &LfsrSpec) -> Result<SpreadingCode> {
    let m = spec.degree;
    // bit i of the state holds stage i + 1
    let mut state: u32 = spec
        .seed
        .iter()
        .enumerate()
        .fold(0, |acc, (i, &b)| acc | (u32::from(b) << i));
    if state == 0 {
        return Err(Error::ZeroSeed);
    }
    let tap_mask: u32 = spec.taps.iter().fold(0, |acc, &t| acc | (1 << (t - 1)));
    let reg_mask: u32 = (1u32 << m) - 1;
    let start = state;
    let expected = spec.period();

    let mut chips = Vec::with_capacity(expected);
    loop {
        let out = (state >> (m - 1)) & 1;
        chips.push(if out == 0 { 1 } else { -1 });
        let fb = (state & tap_mask).count_ones() & 1;
        state = ((state << 1) | fb) & reg_mask;
        if state == start {
            break;
        }
        if chips.len() >= expected {
            // Stage m is always tapped so the state map is a permutation and
            // the orbit of `start` closes within 2^m - 1 steps.
            break;
        }
    }
    if chips.len() != expected || state != start {
        return Err(Error::NonMaximalPolynomial {
            degree: m,
            period: chips.len(),
            expected,
        });
    }
    Ok(SpreadingCode {
        chips,
        family: CodeFamily::MSequence,
        index: 0,
    })
}

/// Rows of the order-`n` Sylvester Hadamard matrix.
pub fn walsh_hadamard_set(n: usize) -> Result<Vec<SpreadingCode>> {
    if n == 0 || !n.is_power_of_two() {
        return Err(Error::NotPowerOfTwo(n));
    }
    let mut rows: Vec<Vec<i8>> = vec![vec![1]];
    while rows.len() < n {
        let mut next = Vec::with_capacity(rows.len() * 2);
        for row in &rows {
            let mut r = row.clone();
            r.extend_from_slice(row);
            next.push(r);
        }
        for row in &rows {
            let mut r = row.clone();
            r.extend(row.iter().map(|c| -c));
            next.push(r);
        }
        rows = next;
    }
    Ok(rows
        .into_iter()
        .enumerate()
        .map(|(index, chips)| SpreadingCode {
            chips,
            family: CodeFamily::Walsh,
            index,
        })
        .collect())
}

/// `Σ_k a[k] · b[(k + lag) mod G]`.
pub fn periodic_correlation(a: &SpreadingCode, b: &SpreadingCode, lag: usize) -> Result<i64> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let g = a.len();
    if g == 0 {
        return Ok(0);
    }
    Ok((0..g)
        .map(|k| i64::from(a.chips[k]) * i64::from(b.chips[(k + lag) % g]))
        .sum())
}

/// One row of the codes report.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeStats {
    pub family: CodeFamily,
    pub index: usize,
    pub length: usize,
    /// (#+1 chips) − (#−1 chips).
    pub balance: i64,
    pub max_off_peak: i64,
}

pub fn code_stats(code: &SpreadingCode) -> CodeStats {
    let g = code.len();
    let ones = code.ones() as i64;
    let max_off_peak = (1..g)
        .map(|lag| {
            periodic_correlation(code, code, lag)
                .expect("same code")
                .abs()
        })
        .max()
        .unwrap_or(0);
    CodeStats {
        family: code.family,
        index: code.index,
        length: g,
        balance: g as i64 - 2 * ones,
        max_off_peak,
    }
}

/// Plain-text table over the tabulated m-sequences and a Walsh set.
pub fn code_report(walsh_order: usize) -> Result<String> {
    let mut rows = Vec::new();
    for m in 2..=10 {
        rows.push(code_stats(&generate_m_sequence(&LfsrSpec::primitive(m)?)?));
    }
    for code in walsh_hadamard_set(walsh_order)? {
        rows.push(code_stats(&code));
    }
    let mut out = format!(
        "{:<12} {:>5} {:>6} {:>7} {:>12}\n",
        "family", "index", "length", "balance", "max_offpeak"
    );
    for r in rows {
        out.push_str(&format!(
            "{:<12} {:>5} {:>6} {:>7} {:>12}\n",
            r.family.to_string(),
            r.index,
            r.length,
            r.balance,
            r.max_off_peak
        ));
    }
    Ok(out)
}
