use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use qdstat::cli::{EXIT_CONFIG, EXIT_IO, EXIT_OK, THREADS_ENV};
use qdstat::report::YieldReport;
use qdstat::simulate::poissonian_reference_stream;
use qdstat::timetags::{read_tags_file, write_tags_file};

fn qdstat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qdstat"))
        .args(args)
        .env(THREADS_ENV, "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

#[test]
fn config_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.tags");
    let out = out.to_str().unwrap();

    let zero = write_config(
        dir.path(),
        "zero.toml",
        "preset = \"dr1\"\n[acquisition]\nduration_s = 0.0\n",
    );
    let o = qdstat(&["simulate", "--config", &zero, "--out", out]);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(
        stderr(&o).contains("acquisition.duration_s"),
        "{}",
        stderr(&o)
    );

    let o = qdstat(&["simulate", "--config", "dr9", "--out", out]);
    assert_eq!(code(&o), EXIT_CONFIG);

    let typo = write_config(
        dir.path(),
        "typo.toml",
        "preset = \"dr1\"\n[detector]\nefficency = 0.1\n",
    );
    assert_eq!(
        code(&qdstat(&["simulate", "--config", &typo, "--out", out])),
        EXIT_CONFIG
    );
    assert!(!Path::new(out).exists());
}

#[test]
fn io_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.tags");
    let outdir = dir.path().join("out");
    let o = qdstat(&[
        "analyze",
        "--tags",
        missing.to_str().unwrap(),
        "--config",
        "dr1",
        "--outdir",
        outdir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), EXIT_IO);

    let tags = dir.path().join("short.tags");
    let s = poissonian_reference_stream(50_000.0, 0.1, 1).unwrap();
    write_tags_file(&tags, &s).unwrap();
    let bytes = fs::read(&tags).unwrap();
    fs::write(&tags, &bytes[..bytes.len() - 4]).unwrap();
    let o = qdstat(&[
        "analyze",
        "--tags",
        tags.to_str().unwrap(),
        "--config",
        "dr1",
        "--outdir",
        outdir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), EXIT_IO);
    assert!(stderr(&o).contains("truncated"), "{}", stderr(&o));

    let unwritable = dir.path().join("no/such/dir/x.tags");
    let o = qdstat(&[
        "simulate",
        "--config",
        "dr1",
        "--out",
        unwritable.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), EXIT_IO);
}

#[test]
fn report_needs_analysis_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = qdstat(&["report", "--dir", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), EXIT_CONFIG);
}

#[test]
fn poissonian_input_keeps_correlation_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let tags = dir.path().join("poisson.tags");
    write_tags_file(
        &tags,
        &poissonian_reference_stream(80_000.0, 3.0, 5).unwrap(),
    )
    .unwrap();
    let cfg = write_config(
        dir.path(),
        "posterior.toml",
        "preset = \"dr1\"\n[analysis]\nwindow = { policy = \"posterior\", threshold = 0.99 }\n",
    );
    let outdir = dir.path().join("out");
    let o = qdstat(&[
        "analyze",
        "--tags",
        tags.to_str().unwrap(),
        "--config",
        &cfg,
        "--outdir",
        outdir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), EXIT_CONFIG);
    assert!(stderr(&o).contains("mixture"), "{}", stderr(&o));

    let stages: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(outdir.join("stages.json")).unwrap()).unwrap();
    let mixture = stages
        .as_array()
        .unwrap()
        .iter()
        .find(|s| s["stage"] == "mixture")
        .unwrap();
    assert_eq!(mixture["ok"], false);
    assert!(mixture["message"].as_str().unwrap().contains("unimodal"));

    let g2 = fs::read_to_string(outdir.join("g2_all.csv")).unwrap();
    let mut lines = g2.lines();
    assert_eq!(lines.next(), Some("lag_ps,g2,sigma"));
    let values: Vec<(f64, f64, f64)> = lines
        .map(|l| {
            let v: Vec<f64> = l.split(',').map(|x| x.parse().unwrap()).collect();
            (v[0], v[1], v[2])
        })
        .collect();
    assert!(values.len() > 50);
    for (lag, g, sigma) in &values {
        assert!(
            (g - 1.0).abs() < (5.0 * sigma).max(0.005),
            "lag {lag}: {g} ± {sigma}"
        );
    }
    assert!(outdir.join("histogram.csv").exists() && outdir.join("trace.csv").exists());
    assert!(!outdir.join("report.json").exists());
}

#[test]
fn simulate_analyze_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "short.toml",
        "preset = \"dr1\"\n[acquisition]\nduration_s = 4.0\n",
    );
    let tags = dir.path().join("dr1.tags");
    let o = qdstat(&[
        "simulate",
        "--config",
        &cfg,
        "--out",
        tags.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    let stream = read_tags_file(&tags).unwrap();
    let expected = 4.0 * stream.mean_rate_hz();
    assert!((stream.len() as f64 - expected).abs() < 1.0);
    assert!(
        (stream.mean_rate_hz() / 76_000.0 - 1.0).abs() < 0.05,
        "{}",
        stream.mean_rate_hz()
    );

    let outdir = dir.path().join("DR1");
    let o = qdstat(&[
        "analyze",
        "--tags",
        tags.to_str().unwrap(),
        "--config",
        &cfg,
        "--outdir",
        outdir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), EXIT_OK, "{}", stderr(&o));
    for f in [
        "trace.csv",
        "histogram.csv",
        "states.json",
        "decay_bright.csv",
        "decay_grey.csv",
        "g2_all.csv",
        "g2_bright.csv",
        "g2_grey.csv",
        "acf_bright_peaks.csv",
        "acf_grey_histogram.csv",
        "report.json",
        "report.csv",
    ] {
        assert!(outdir.join(f).exists(), "{f}");
    }
    let report =
        YieldReport::from_json(&fs::read_to_string(outdir.join("report.json")).unwrap()).unwrap();
    assert_eq!(
        report.to_json(),
        fs::read_to_string(outdir.join("report.json")).unwrap()
    );

    let o = qdstat(&[
        "report",
        "--dir",
        outdir.to_str().unwrap(),
        "--dir",
        outdir.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), EXIT_OK);
    let table = String::from_utf8(o.stdout).unwrap();
    assert_eq!(
        table
            .lines()
            .filter(|l| l.trim_start().starts_with("DR1 "))
            .count(),
        2,
        "{table}"
    );
    assert!(table.contains(&format!("{:.1}", report.tau_x)));
}
