//! Batch front-end: flat `key = value` configs, figure presets, CSV output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};

use crate::channel::PowerDelayProfile;
use crate::codes::code_report;
use crate::estimation::{Estimator, Interpolation, PilotLayout};
use crate::selftest;
use crate::simulate::{
    run_sweep_with, CsiSource, EstimatorSelection, Execution, MetricsRecord, SimConfig,
};
use crate::{Error, Result};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "MCCDMA_THREADS";

pub const CSV_HEADER: &str =
    "snr_db,mse_ls,mse_mmse,mse_theory,ber,ser,bit_errors,bits,symbol_errors,symbols,trials";

/// Every accepted config key, in manifest order.
pub const CONFIG_KEYS: &[&str] = &[
    "preset",
    "n_t",
    "n_r",
    "pg",
    "users",
    "n_sc",
    "n_fft",
    "cp_len",
    "scheme",
    "profile",
    "taps",
    "decay",
    "correlation",
    "block_length",
    "training_len",
    "pilot",
    "np",
    "interp",
    "kept_taps",
    "estimator",
    "csi",
    "combiner",
    "snr",
    "snr_grid",
    "trials",
    "seed",
    "mse_normalized",
];

/// Manifest-only keys skipped when a manifest is loaded back as a config.
const META_KEYS: &[&str] = &["tool_version", "timestamp"];

/// A figure preset: the antenna counts and processing gain of one experiment,
/// plus any key it pins.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Preset {
    pub name: &'static str,
    pub n_t: usize,
    pub n_r: usize,
    pub pg: usize,
    pub extra: &'static [(&'static str, &'static str)],
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "fig4",
        n_t: 2,
        n_r: 2,
        pg: 32,
        extra: &[],
    },
    Preset {
        name: "fig5",
        n_t: 2,
        n_r: 2,
        pg: 16,
        extra: &[],
    },
    Preset {
        name: "fig6",
        n_t: 2,
        n_r: 3,
        pg: 32,
        extra: &[],
    },
    Preset {
        name: "fig7",
        n_t: 2,
        n_r: 4,
        pg: 32,
        extra: &[],
    },
    // BER/SER with MMSE estimates; antenna and pg settings follow fig4
    Preset {
        name: "fig8",
        n_t: 2,
        n_r: 2,
        pg: 32,
        extra: &[("estimator", "mmse"), ("csi", "mmse")],
    },
];

pub fn preset(name: &str) -> Option<&'static Preset> {
    PRESETS.iter().find(|p| p.name == name)
}

/// Ordered `key → value` assignments; later sets win.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Assignments {
    values: BTreeMap<String, String>,
}

impl Assignments {
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim();
        if !CONFIG_KEYS.contains(&key) {
            return Err(Error::UnknownKey(key.to_string()));
        }
        self.values
            .insert(key.to_string(), value.trim().to_string());
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(String::as_str)
    }

    pub fn merge(&mut self, other: &Assignments) {
        for (k, v) in &other.values {
            self.values.insert(k.clone(), v.clone());
        }
    }

    /// Parse a flat `key = value` document. Blank lines and lines starting
    /// with `#` are ignored.
    pub fn parse(text: &str) -> Result<Self> {
        let mut out = Self::default();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            out.set_pair(line)?;
        }
        Ok(out)
    }

    /// Recover the assignments from the `# key=value` header of an emitted CSV.
    pub fn from_manifest(text: &str) -> Result<Self> {
        let mut out = Self::default();
        for line in text.lines() {
            let Some(body) = line.strip_prefix('#') else {
                break;
            };
            let body = body.trim();
            let key = body.split('=').next().unwrap_or("").trim();
            if META_KEYS.contains(&key) {
                continue;
            }
            out.set_pair(body)?;
        }
        Ok(out)
    }

    pub fn set_pair(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| Error::BadValue {
            key: pair.to_string(),
            value: String::new(),
            expected: "a key=value pair".into(),
        })?;
        self.set(k, v)
    }

    fn parse_value<T: std::str::FromStr>(&self, key: &str, expected: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>().map_err(|_| Error::BadValue {
                    key: key.to_string(),
                    value: v.to_string(),
                    expected: expected.to_string(),
                })
            })
            .transpose()
    }

    fn parse_enum<T: std::str::FromStr<Err = String>>(&self, key: &str) -> Result<Option<T>> {
        self.get(key)
            .map(|v| {
                v.parse::<T>().map_err(|expected| Error::BadValue {
                    key: key.to_string(),
                    value: v.to_string(),
                    expected,
                })
            })
            .transpose()
    }
}

fn bad(key: &str, value: impl ToString, expected: &str) -> Error {
    Error::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        expected: expected.to_string(),
    }
}

fn positive(a: &Assignments, key: &str) -> Result<Option<usize>> {
    match a.parse_value::<i64>(key, "a positive integer")? {
        Some(v) if v >= 1 => Ok(Some(v as usize)),
        Some(v) => Err(bad(key, v, "a positive integer")),
        None => Ok(None),
    }
}

fn non_negative(a: &Assignments, key: &str) -> Result<Option<usize>> {
    match a.parse_value::<i64>(key, "a non-negative integer")? {
        Some(v) if v >= 0 => Ok(Some(v as usize)),
        Some(v) => Err(bad(key, v, "a non-negative integer")),
        None => Ok(None),
    }
}

/// `start:step:stop` in dB, inclusive of `stop`.
pub fn parse_snr_range(spec: &str) -> Result<Vec<f64>> {
    let expected = "start:step:stop in dB with step > 0 and start <= stop";
    let parts: Vec<f64> = spec
        .split(':')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("snr", spec, expected))?;
    let [start, step, stop] = parts[..] else {
        return Err(bad("snr", spec, expected));
    };
    if !(step > 0.0) || start > stop || !start.is_finite() || !stop.is_finite() {
        return Err(bad("snr", spec, expected));
    }
    let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|i| start + step * i as f64).collect())
}

fn parse_snr_grid(list: &str) -> Result<Vec<f64>> {
    let grid: Vec<f64> = list
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| bad("snr_grid", list, "comma-separated dB values"))?;
    if grid.is_empty() || grid.iter().any(|v| !v.is_finite()) {
        return Err(bad("snr_grid", list, "comma-separated finite dB values"));
    }
    Ok(grid)
}

/// Resolve assignments into a full configuration. Preset keys are applied
/// first and explicit keys override them.
pub fn resolve(assignments: &Assignments) -> Result<(SimConfig, Option<String>)> {
    let mut a = Assignments::default();
    let preset_name = assignments.get("preset").map(str::to_string);
    if let Some(name) = &preset_name {
        let p = preset(name).ok_or_else(|| {
            bad(
                "preset",
                name,
                &format!(
                    "one of {}",
                    PRESETS
                        .iter()
                        .map(|p| p.name)
                        .collect::<Vec<_>>()
                        .join(", ")
                ),
            )
        })?;
        a.set("n_t", &p.n_t.to_string())?;
        a.set("n_r", &p.n_r.to_string())?;
        a.set("pg", &p.pg.to_string())?;
        for (k, v) in p.extra {
            a.set(k, v)?;
        }
    }
    a.merge(assignments);

    let n_t = positive(&a, "n_t")?.ok_or(Error::MissingRequired("n_t"))?;
    let n_r = positive(&a, "n_r")?.ok_or(Error::MissingRequired("n_r"))?;
    let pg = positive(&a, "pg")?.ok_or(Error::MissingRequired("pg"))?;
    if !pg.is_power_of_two() {
        return Err(bad("pg", pg, "a power of two"));
    }
    let mut c = SimConfig::new(n_t, n_r, pg);

    if let Some(users) = positive(&a, "users")? {
        if users > pg {
            return Err(bad("users", users, &format!("1..={pg}")));
        }
        c.users = users;
        c.n_fft = (pg * users).next_power_of_two();
    }
    if let Some(n_fft) = positive(&a, "n_fft")? {
        c.n_fft = n_fft;
    }
    c.n_sc = c.n_fft;
    c.cp_len = c.n_fft / 8;
    if let Some(n_sc) = positive(&a, "n_sc")? {
        c.n_sc = n_sc;
    }
    if let Some(cp) = non_negative(&a, "cp_len")? {
        c.cp_len = cp;
    }
    if let Some(s) = a.parse_enum("scheme")? {
        c.scheme = s;
    }

    let taps = positive(&a, "taps")?;
    let decay = a.parse_value::<f64>("decay", "a positive number")?;
    if let Some(d) = decay {
        if !(d > 0.0 && d.is_finite()) {
            return Err(bad("decay", d, "a positive number"));
        }
    }
    c.profile = match a.get("profile").unwrap_or("flat") {
        "flat" => PowerDelayProfile::Flat,
        "exp" => PowerDelayProfile::Exponential {
            taps: taps.unwrap_or(4),
            decay: decay.unwrap_or(1.0),
        },
        other => return Err(bad("profile", other, "one of flat, exp")),
    };
    if let Some(r) = a.parse_value::<f64>("correlation", "a number in [0, 1)")? {
        if !(0.0..1.0).contains(&r) {
            return Err(bad("correlation", r, "a number in [0, 1)"));
        }
        c.correlation = r;
    }

    if let Some(b) = positive(&a, "block_length")? {
        c.block_length = b;
    }
    if let Some(n) = positive(&a, "training_len")? {
        c.training_len = n;
    }
    c.layout = match a.get("pilot").unwrap_or("block") {
        "block" => PilotLayout::Block {
            period: c.block_length,
        },
        "comb" => PilotLayout::Comb {
            pilots: positive(&a, "np")?.unwrap_or((c.n_sc / 8).max(2)),
        },
        other => return Err(bad("pilot", other, "one of block, comb")),
    };
    let kept = positive(&a, "kept_taps")?.unwrap_or(c.profile.num_taps());
    c.interpolation = match a.get("interp") {
        None => match c.layout {
            PilotLayout::Block { .. } => Interpolation::None,
            PilotLayout::Comb { .. } => Interpolation::Linear,
        },
        Some("none") => Interpolation::None,
        Some("linear") => Interpolation::Linear,
        Some("dft") => Interpolation::DftTruncated { kept_taps: kept },
        Some(other) => return Err(bad("interp", other, "one of none, linear, dft")),
    };

    if let Some(e) = a.parse_enum::<EstimatorSelection>("estimator")? {
        c.estimators = e;
    }
    c.csi = match a.parse_enum::<CsiSource>("csi")? {
        Some(csi) => csi,
        None if c.estimators.includes(Estimator::Mmse) => CsiSource::Estimated(Estimator::Mmse),
        None => CsiSource::Estimated(Estimator::Ls),
    };
    if let Some(comb) = a.parse_enum("combiner")? {
        c.combiner = comb;
    }

    match (a.get("snr"), a.get("snr_grid")) {
        (Some(_), Some(_)) => {
            return Err(bad(
                "snr",
                "both snr and snr_grid",
                "only one of snr, snr_grid",
            ))
        }
        (Some(range), None) => c.snr_grid_db = parse_snr_range(range)?,
        (None, Some(list)) => c.snr_grid_db = parse_snr_grid(list)?,
        (None, None) => {}
    }
    if let Some(t) = a.parse_value::<u64>("trials", "a positive integer")? {
        if t == 0 {
            return Err(bad("trials", t, "a positive integer"));
        }
        c.trials = t;
    }
    if let Some(s) = a.parse_value::<u64>("seed", "an unsigned 64-bit integer")? {
        c.master_seed = s;
    }
    if let Some(n) = a.parse_value::<bool>("mse_normalized", "true or false")? {
        c.mse_normalized = n;
    }

    c.validate()?;
    Ok((c, preset_name))
}

/// Read an optional config file and apply overrides on top.
pub fn parse_config(
    path: Option<&Path>,
    overrides: &Assignments,
) -> Result<(SimConfig, Option<String>)> {
    let mut a = match path {
        Some(p) => Assignments::parse(&read(p)?)?,
        None => Assignments::default(),
    };
    a.merge(overrides);
    resolve(&a)
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Shortest round-trip decimal; `nan` for absent values.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "nan".to_string()
    } else {
        format!("{v}")
    }
}

/// The resolved configuration plus run metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub config: SimConfig,
    pub preset: Option<String>,
    pub tool_version: String,
    /// Seconds since the Unix epoch.
    pub timestamp: u64,
}

impl RunManifest {
    pub fn new(config: SimConfig, preset: Option<String>) -> Self {
        let timestamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs());
        Self {
            config,
            preset,
            tool_version: TOOL_VERSION.to_string(),
            timestamp,
        }
    }

    /// Every configuration key with an explicit value, in manifest order.
    pub fn config_pairs(&self) -> Vec<(&'static str, String)> {
        let c = &self.config;
        let mut v: Vec<(&'static str, String)> = Vec::new();
        if let Some(p) = &self.preset {
            v.push(("preset", p.clone()));
        }
        v.push(("n_t", c.n_t.to_string()));
        v.push(("n_r", c.n_r.to_string()));
        v.push(("pg", c.pg.to_string()));
        v.push(("users", c.users.to_string()));
        v.push(("n_sc", c.n_sc.to_string()));
        v.push(("n_fft", c.n_fft.to_string()));
        v.push(("cp_len", c.cp_len.to_string()));
        v.push(("scheme", c.scheme.to_string()));
        v.push(("profile", c.profile.to_string()));
        if let PowerDelayProfile::Exponential { taps, decay } = c.profile {
            v.push(("taps", taps.to_string()));
            v.push(("decay", format_float(decay)));
        }
        v.push(("correlation", format_float(c.correlation)));
        v.push(("block_length", c.block_length.to_string()));
        v.push(("training_len", c.training_len.to_string()));
        match c.layout {
            PilotLayout::Block { .. } => v.push(("pilot", "block".into())),
            PilotLayout::Comb { pilots } => {
                v.push(("pilot", "comb".into()));
                v.push(("np", pilots.to_string()));
            }
        }
        v.push(("interp", c.interpolation.to_string()));
        if let Interpolation::DftTruncated { kept_taps } = c.interpolation {
            v.push(("kept_taps", kept_taps.to_string()));
        }
        v.push(("estimator", c.estimators.to_string()));
        v.push(("csi", c.csi.to_string()));
        v.push(("combiner", c.combiner.to_string()));
        v.push((
            "snr_grid",
            c.snr_grid_db
                .iter()
                .map(|s| format_float(*s))
                .collect::<Vec<_>>()
                .join(","),
        ));
        v.push(("trials", c.trials.to_string()));
        v.push(("seed", c.master_seed.to_string()));
        v.push(("mse_normalized", c.mse_normalized.to_string()));
        v
    }

    /// `key=value` lines, loadable with `--config`.
    pub fn to_config_text(&self) -> String {
        self.config_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }

    pub fn header(&self) -> String {
        let mut out = String::new();
        for (k, v) in self.config_pairs() {
            let _ = writeln!(out, "# {k}={v}");
        }
        let _ = writeln!(out, "# tool_version={}", self.tool_version);
        let _ = writeln!(out, "# timestamp={}", self.timestamp);
        out
    }
}

pub fn render_csv(records: &[MetricsRecord], manifest: &RunManifest) -> String {
    let mut out = manifest.header();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{}",
            format_float(r.snr_db),
            format_float(r.mse_ls),
            format_float(r.mse_mmse),
            format_float(r.mse_theory),
            format_float(r.ber),
            format_float(r.ser),
            r.bit_errors,
            r.bits,
            r.symbol_errors,
            r.symbols,
            r.trials
        );
    }
    out
}

pub fn write_csv(records: &[MetricsRecord], manifest: &RunManifest, path: &Path) -> Result<()> {
    if records.is_empty() {
        return Err(Error::InvalidConfig("no records to write".into()));
    }
    std::fs::write(path, render_csv(records, manifest)).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

#[derive(Debug, Parser)]
#[command(
    name = "mccdma",
    version,
    about = "MIMO MC-CDMA channel estimation simulator"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run an SNR sweep and write CSV plot data.
    Sweep(SweepArgs),
    /// Print period, balance and correlation figures of the spreading codes.
    CodesReport {
        /// Walsh–Hadamard order to include.
        #[arg(long, default_value_t = 8)]
        walsh_order: usize,
    },
    /// List the figure presets with their resolved configurations.
    Presets,
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub preset: Option<String>,
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Replay the manifest header of a previously written CSV.
    #[arg(long, conflicts_with = "config")]
    pub manifest: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub trials: Option<u64>,
    /// start:step:stop in dB.
    #[arg(long)]
    pub snr: Option<String>,
    #[arg(long, value_parser = ["ls", "mmse", "both"])]
    pub estimator: Option<String>,
    #[arg(long, value_parser = ["block", "comb"])]
    pub pilot: Option<String>,
    /// Comb pilot count.
    #[arg(long)]
    pub np: Option<usize>,
    #[arg(long, value_parser = ["none", "linear", "dft"])]
    pub interp: Option<String>,
    /// Worker threads; 1 runs sequentially, 0 lets the pool decide.
    #[arg(long, env = THREADS_ENV)]
    pub threads: Option<usize>,
    /// Any other config key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl SweepArgs {
    fn overrides(&self) -> Result<Assignments> {
        let mut a = Assignments::default();
        for pair in &self.set {
            a.set_pair(pair)?;
        }
        let mut put = |k: &str, v: Option<String>| -> Result<()> {
            if let Some(v) = v {
                a.set(k, &v)?;
            }
            Ok(())
        };
        put("preset", self.preset.clone())?;
        put("seed", self.seed.map(|s| s.to_string()))?;
        put("trials", self.trials.map(|t| t.to_string()))?;
        put("snr", self.snr.clone())?;
        put("estimator", self.estimator.clone())?;
        put("pilot", self.pilot.clone())?;
        put("np", self.np.map(|n| n.to_string()))?;
        put("interp", self.interp.clone())?;
        if self.snr.is_some() {
            a.values.remove("snr_grid");
        }
        Ok(a)
    }

    pub fn resolve(&self) -> Result<(SimConfig, Option<String>)> {
        let mut base = match (&self.config, &self.manifest) {
            (Some(p), _) => Assignments::parse(&read(p)?)?,
            (None, Some(p)) => Assignments::from_manifest(&read(p)?)?,
            (None, None) => Assignments::default(),
        };
        let overrides = self.overrides()?;
        if overrides.get("snr").is_some() {
            base.values.remove("snr_grid");
        }
        base.merge(&overrides);
        resolve(&base)
    }
}

fn sweep(args: &SweepArgs) -> Result<()> {
    let (config, preset) = args.resolve()?;
    let manifest = RunManifest::new(config.clone(), preset);
    let records = run_with_threads(&config, args.threads)?;
    write_csv(&records, &manifest, &args.out)?;
    log::info!("wrote {} rows to {}", records.len(), args.out.display());
    Ok(())
}

pub fn run_with_threads(config: &SimConfig, threads: Option<usize>) -> Result<Vec<MetricsRecord>> {
    match threads {
        Some(1) => run_sweep_with(config, Execution::Sequential),
        #[cfg(feature = "parallel")]
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
            pool.install(|| run_sweep_with(config, Execution::Parallel))
        }
        #[cfg(not(feature = "parallel"))]
        Some(_) => run_sweep_with(config, Execution::Sequential),
        None => run_sweep_with(config, Execution::default()),
    }
}

fn presets_listing() -> Result<String> {
    let mut out = String::new();
    for p in PRESETS {
        let mut a = Assignments::default();
        a.set("preset", p.name)?;
        let (config, preset) = resolve(&a)?;
        let _ = writeln!(out, "[{}] n_t={} n_r={} pg={}", p.name, p.n_t, p.n_r, p.pg);
        out.push_str(&RunManifest::new(config, preset).to_config_text());
        out.push('\n');
    }
    Ok(out)
}

/// Execute a parsed command.
pub fn run_command(command: &Command) -> Result<bool> {
    match command {
        Command::Sweep(args) => sweep(args).map(|_| true),
        Command::CodesReport { walsh_order } => {
            print!("{}", code_report(*walsh_order)?);
            Ok(true)
        }
        Command::Presets => {
            print!("{}", presets_listing()?);
            Ok(true)
        }
        Command::Selftest => {
            let results = selftest::run_all();
            for r in &results {
                println!(
                    "{} {}: {}",
                    if r.passed { "PASS" } else { "FAIL" },
                    r.name,
                    r.detail
                );
            }
            Ok(results.iter().all(|r| r.passed))
        }
    }
}

/// Entry point used by the binary; returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run_command(&cli.command) {
        Ok(true) => 0,
        Ok(false) => {
            eprintln!("error: selftest failed");
            1
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}
