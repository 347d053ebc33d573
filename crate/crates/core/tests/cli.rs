use std::process::Command;

use mccdma::cli::{parse_config, resolve, Assignments, RunManifest, CSV_HEADER, PRESETS};
use mccdma::simulate::run_sweep;
use mccdma::Error;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_mccdma"));
    c.env("RUST_LOG", "warn").env_remove("MCCDMA_THREADS");
    c
}

fn data_rows(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

#[test]
fn config_file_with_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.cfg");
    std::fs::write(
        &path,
        "# small run\nn_t = 2\nn_r = 3\npg = 16\ntrials = 5\nsnr = 0:10:20\n",
    )
    .unwrap();
    let mut flags = Assignments::default();
    flags.set("trials", "9").unwrap();
    let (c, preset) = parse_config(Some(&path), &flags).unwrap();
    assert_eq!((c.n_t, c.n_r, c.pg, c.trials), (2, 3, 16, 9));
    assert_eq!(c.snr_grid_db, vec![0.0, 10.0, 20.0]);
    assert_eq!(preset, None);
    assert!(matches!(
        parse_config(Some(&dir.path().join("missing.cfg")), &flags),
        Err(Error::Io { .. })
    ));
}

#[test]
fn every_preset_round_trips_through_its_manifest() {
    for p in PRESETS {
        let mut a = Assignments::default();
        a.set("preset", p.name).unwrap();
        let (c, name) = resolve(&a).unwrap();
        assert_eq!((c.n_t, c.n_r, c.pg), (p.n_t, p.n_r, p.pg));
        let manifest = RunManifest::new(c.clone(), name);
        let (back, _) = resolve(&Assignments::parse(&manifest.to_config_text()).unwrap()).unwrap();
        assert_eq!(back, c);
    }
}

#[test]
fn replayed_manifest_reproduces_the_rows() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.csv");
    let second = dir.path().join("b.csv");
    let status = bin()
        .args([
            "sweep", "--preset", "fig5", "--trials", "20", "--snr", "0:15:30", "--seed", "9",
            "--out",
        ])
        .arg(&first)
        .status()
        .unwrap();
    assert!(status.success());
    let status = bin()
        .arg("sweep")
        .arg("--manifest")
        .arg(&first)
        .arg("--out")
        .arg(&second)
        .status()
        .unwrap();
    assert!(status.success());
    let a = std::fs::read_to_string(&first).unwrap();
    let b = std::fs::read_to_string(&second).unwrap();
    let strip = |t: &str| {
        t.lines()
            .filter(|l| !l.starts_with("# timestamp="))
            .collect::<Vec<_>>()
            .join("\n")
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(data_rows(&a)[0], CSV_HEADER);
    assert_eq!(data_rows(&a).len(), 4);
}

#[test]
fn thread_count_does_not_change_output() {
    let dir = tempfile::tempdir().unwrap();
    let mut rows = Vec::new();
    for threads in ["1", "2"] {
        let out = dir.path().join(format!("t{threads}.csv"));
        let status = bin()
            .args([
                "sweep", "--preset", "fig4", "--trials", "70", "--snr", "10:10:20", "--out",
            ])
            .arg(&out)
            .env("MCCDMA_THREADS", threads)
            .status()
            .unwrap();
        assert!(status.success());
        rows.push(data_rows(&std::fs::read_to_string(&out).unwrap()).join("\n"));
    }
    assert_eq!(rows[0], rows[1]);
}

#[test]
fn disabled_ls_writes_nan() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("mmse.csv");
    let status = bin()
        .args([
            "sweep", "--preset", "fig8", "--trials", "3", "--snr", "0:1:0", "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let rows = data_rows(&text);
    assert_eq!(rows.len(), 2);
    let fields: Vec<&str> = rows[1].split(',').collect();
    assert_eq!(fields.len(), 11);
    assert_eq!(fields[1], "nan");
    assert!(text.contains("# estimator=mmse\n"));
}

#[test]
fn library_and_binary_agree() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig6.csv");
    let status = bin()
        .args([
            "sweep", "--preset", "fig6", "--trials", "10", "--snr", "5:5:10", "--seed", "3",
            "--out",
        ])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let (c, p) = resolve(&Assignments::from_manifest(&text).unwrap()).unwrap();
    let rendered = mccdma::cli::render_csv(&run_sweep(&c).unwrap(), &RunManifest::new(c, p));
    assert_eq!(data_rows(&rendered), data_rows(&text));
}

#[test]
fn errors_exit_nonzero_with_one_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "n_t = 2\nn_r = -1\npg = 32\n").unwrap();
    let out = bin()
        .arg("sweep")
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.path().join("x.csv"))
        .output()
        .unwrap();
    assert!(!out.status.success());
    let stderr = String::from_utf8(out.stderr).unwrap();
    assert_eq!(stderr.lines().count(), 1, "{stderr}");
    assert!(stderr.contains("n_r"));

    let out = bin().args(["sweep", "--out", "x.csv"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("n_t"));

    let out = bin().arg("frobnicate").output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8(out.stderr).unwrap().contains("Usage"));

    let out = bin()
        .args([
            "sweep",
            "--preset",
            "fig4",
            "--set",
            "colour=blue",
            "--out",
            "x.csv",
        ])
        .output()
        .unwrap();
    assert!(!out.status.success());
}

#[test]
fn informational_subcommands() {
    let out = bin().arg("presets").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    for needle in [
        "[fig4] n_t=2 n_r=2 pg=32",
        "[fig5] n_t=2 n_r=2 pg=16",
        "[fig6] n_t=2 n_r=3",
        "[fig7] n_t=2 n_r=4",
        "[fig8]",
    ] {
        assert!(text.contains(needle), "{needle}");
    }

    let out = bin()
        .args(["codes-report", "--walsh-order", "4"])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(!out.stdout.is_empty());

    let out = bin().arg("selftest").output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.lines().all(|l| l.starts_with("PASS")));
}
