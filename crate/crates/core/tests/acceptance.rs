//! Acceptance criteria. Runs as a plain program and prints one PASS/FAIL line
//! per criterion; exits non-zero if any criterion fails.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use qdstat::config::RunConfig;
use qdstat::correlate::{
    channel_stream, log_g2, pulsed_acf, CorrelationConfig, CorrelationError, PulsedAcf,
    PulsedConfig,
};
use qdstat::lifetime::ExpFit;
use qdstat::physics::{general_g2_zero, p_at_least, poisson_weight, ExcitationModel, YieldLadder};
use qdstat::pipeline::{analyze, Analysis};
use qdstat::report::{build_report, YieldReport};
use qdstat::simulate::simulate_stream;
use qdstat::timetags::{read_tags, write_tags, write_tags_csv, StreamMeta, Tag, TimeTagStream};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    passed: bool,
    lines: Vec<String>,
}

impl Outcome {
    fn new() -> Self {
        Outcome {
            passed: true,
            lines: Vec::new(),
        }
    }

    fn check(&mut self, name: &str, ok: bool, detail: String) {
        self.passed &= ok;
        self.lines.push(format!(
            "    [{}] {name}: {detail}",
            if ok { "ok" } else { "FAIL" }
        ));
    }

    fn within(&mut self, name: &str, value: f64, target: f64, tol: f64) {
        let ok = (value - target).abs() <= tol;
        self.check(name, ok, format!("{value:.4} (target {target} ± {tol})"));
    }
}

fn fit(tau_ns: f64) -> ExpFit {
    ExpFit {
        tau_ns,
        tau_se_ns: 0.0,
        amplitude: 0.0,
        background: 0.0,
        window_ns: (0.0, 0.0),
        reduced_chi2: 1.0,
        counts_in_window: 0,
        iterations: 0,
    }
}

fn acf(g2_zero: f64) -> PulsedAcf {
    PulsedAcf {
        rep_period_ps: 400_000,
        periods: 0,
        histogram_edges_ps: Vec::new(),
        histogram: Vec::new(),
        peak_counts: Vec::new(),
        peak_areas: Vec::new(),
        spill: (0.0, 0.0),
        peak_expected: Vec::new(),
        long_delay_g2: 1.0,
        normalization: 1.0,
        g2_zero,
    }
}

fn table_row(tau_x: f64, tau_trion: f64, g2_bright: f64, g2_grey: f64) -> YieldReport {
    build_report(
        &fit(tau_x),
        &fit(tau_trion),
        &acf(g2_bright),
        &acf(g2_grey),
        None,
        None,
        None,
        0.4,
        1.0,
    )
    .expect("table inputs are valid")
}

fn criterion_1() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    let dr1 = table_row(65.0, 11.6, 0.12, 0.32);
    o.within("DR1 Q_X- %", 100.0 * dr1.q_trion, 36.0, 1.0);
    o.within("DR1 Q_2X %", 100.0 * dr1.q_2x, 10.6, 0.1);
    o.within("DR1 Q_2X- %", 100.0 * dr1.q_2x_minus, 10.1, 0.1);
    o.within(
        "DR1 tau_A- ns",
        dr1.tau_a_minus.unwrap_or(f64::NAN),
        18.3,
        0.1,
    );
    o.within(
        "DR1 tau_A+ ns",
        dr1.tau_a_plus.unwrap_or(f64::NAN),
        4.9,
        0.1,
    );
    let from_rounded = 1.0 / (2.0 / 65.0 * (1.0 / 0.36 - 1.0));
    o.lines.push(format!(
        "    note: DR1 tau_A- from the exact Q_X- is {:.2} ns; from Q_X- rounded to 36 % it is {from_rounded:.2} ns",
        dr1.tau_a_minus.unwrap_or(f64::NAN)
    ));
    let dr2 = table_row(28.0, 2.6, 0.11, 0.47);
    o.within("DR2 Q_X- %", 100.0 * dr2.q_trion, 18.0, 1.0);
    o.within("DR2 Q_2X %", 100.0 * dr2.q_2x, 9.7, 0.1);
    o.within(
        "DR2 tau_A- ns",
        dr2.tau_a_minus.unwrap_or(f64::NAN),
        3.1,
        0.1,
    );
    o.within(
        "DR2 tau_A+ ns",
        dr2.tau_a_plus.unwrap_or(f64::NAN),
        2.9,
        0.1,
    );
    // the tabulated 6.2 % disagrees with the yield algebra; the algebraic value is checked
    let q2x_minus_exact = 0.47 * dr2.q_trion / poisson_weight(0.4).unwrap();
    o.within(
        "DR2 Q_2X- (algebraic) %",
        100.0 * dr2.q_2x_minus,
        100.0 * q2x_minus_exact,
        0.1,
    );
    o.lines.push(format!(
        "    note: DR2 Q_2X- = {:.2} % here, 7.5 % from rounded inputs, 6.2 % tabulated",
        100.0 * dr2.q_2x_minus
    ));
    let elapsed = start.elapsed();
    o.check(
        "runtime",
        elapsed < Duration::from_secs(1),
        format!("{elapsed:?}"),
    );
    o
}

fn criterion_2() -> Outcome {
    let mut o = Outcome::new();
    let start = Instant::now();
    o.within(
        "poisson_weight(0.4)",
        poisson_weight(0.4).unwrap(),
        1.13,
        0.005,
    );
    o.within(
        "poisson_weight(1e-6)",
        poisson_weight(1e-6).unwrap(),
        1.0,
        1e-3,
    );
    let triple = p_at_least(3, 0.4) / p_at_least(1, 0.4);
    o.within("P(N>=3)/P(N>=1) at 0.4", triple, 0.024, 0.0005);
    o.check(
        "rounds to 2 %",
        (100.0 * triple).round() == 2.0,
        format!("{:.2} %", 100.0 * triple),
    );
    let elapsed = start.elapsed();
    o.check(
        "runtime",
        elapsed < Duration::from_secs(1),
        format!("{elapsed:?}"),
    );
    o
}

struct ClosedLoop {
    analysis: Analysis,
    elapsed: Duration,
}

fn closed_loop() -> ClosedLoop {
    let start = Instant::now();
    let run = RunConfig::preset("dr1").unwrap();
    let sim = simulate_stream(
        &run.emitter_model().unwrap(),
        &run.detector,
        run.acquisition.duration_s,
        run.acquisition.seed,
    )
    .unwrap();
    let analysis = analyze(
        &sim.stream,
        run.excitation.rep_period_ps,
        &run.analysis,
        run.mean_excitations(),
    )
    .unwrap();
    ClosedLoop {
        analysis,
        elapsed: start.elapsed(),
    }
}

fn criterion_3(cl: &ClosedLoop) -> Outcome {
    let mut o = Outcome::new();
    let a = &cl.analysis;
    let tau = |s: Option<&qdstat::pipeline::SubsetAnalysis>| {
        s.and_then(|s| s.fit).map_or(f64::NAN, |f| f.tau_ns)
    };
    let g2 = |s: Option<&qdstat::pipeline::SubsetAnalysis>| {
        s.and_then(|s| s.acf.as_ref())
            .map_or(f64::NAN, |acf| acf.g2_zero)
    };
    o.within("tau_X ns", tau(a.bright.as_ref()), 65.0, 3.0);
    o.within("tau_X- ns", tau(a.grey.as_ref()), 11.6, 1.5);
    o.within("g2_bright(0)", g2(a.bright.as_ref()), 0.12, 0.03);
    o.within("g2_grey(0)", g2(a.grey.as_ref()), 0.32, 0.06);
    o.within("g2_all(0)", g2(Some(&a.all)), 0.14, 0.04);
    match (a.state_intensities(), &a.report) {
        (Some((bright, grey)), Some(r)) => o.within(
            "grey/bright intensity vs Q_X-",
            grey.counts_per_ms / bright.counts_per_ms,
            r.q_trion,
            0.05,
        ),
        _ => o.check(
            "grey/bright intensity vs Q_X-",
            false,
            "no state intensities or report".into(),
        ),
    }
    if let Some(f) = a.fractions() {
        o.lines.push(format!(
            "    note: photon fractions bright {:.3} grey {:.3} discarded {:.3}",
            f.bright, f.grey, f.discarded
        ));
    }
    o.check(
        "runtime",
        cl.elapsed < Duration::from_secs(300),
        format!("{:?}", cl.elapsed),
    );
    o
}

fn criterion_4(cl: &ClosedLoop) -> Outcome {
    let mut o = Outcome::new();
    let a = &cl.analysis;
    let rep = a.rep_period_ps;
    let Some(sel) = &a.selection else {
        o.check("post-selection", false, "missing".into());
        return o;
    };
    let grid = CorrelationConfig {
        min_lag_ps: 1_000_000,
        max_lag_ps: 10_000_000_000,
        bins_per_decade: 4,
        align_period_ps: Some(rep),
    };
    for (name, s) in [("bright", &sel.bright), ("grey", &sel.grey)] {
        match log_g2(&channel_stream(s, 1), &channel_stream(s, 2), &grid) {
            Ok(c) => {
                let (worst, at) =
                    c.g2.iter()
                        .zip(c.edges_ps.windows(2))
                        .map(|(g, w)| ((g - 1.0).abs(), w[0]))
                        .fold((0.0, 0), |acc, x| if x.0 > acc.0 { x } else { acc });
                o.check(
                    &format!("{name} substream |g2 - 1| over 1 us-10 ms"),
                    worst <= 0.05,
                    format!(
                        "max {worst:.4} at {:.0} us ({} lag bins)",
                        at as f64 * 1e-6,
                        c.len()
                    ),
                );
            }
            Err(e) => o.check(name, false, e.to_string()),
        }
    }
    let Some(all) = &a.all.g2 else {
        o.check("unsorted curve", false, "missing".into());
        return o;
    };
    let mean = |lo: f64, hi: f64| all.mean_g2_over(lo as i64, hi as i64).unwrap_or(f64::NAN);
    let plateau = mean(1e6, 1e7);
    let near_10ms = mean(7e9, 1.5e10);
    let tail = mean(3e10, 1e11);
    o.check(
        "unsorted plateau 1-10 us > 1.05",
        plateau > 1.05,
        format!("{plateau:.4}"),
    );
    o.check(
        "still above 1 around 10 ms, below the plateau",
        near_10ms > 1.005 && near_10ms < plateau,
        format!("{near_10ms:.4}"),
    );
    o.check(
        "back to 1 at 30-100 ms",
        (tail - 1.0).abs() < 0.01,
        format!("{tail:.4}"),
    );
    o
}

/// Counts pairs `(x, y)` with `edges[j] <= y - x < edges[j + 1]`.
fn brute(a: &[u64], b: &[u64], edges: &[i64]) -> Vec<u64> {
    let mut out = vec![0; edges.len() - 1];
    let (lo, hi) = (edges[0], edges[edges.len() - 1]);
    for &x in a {
        for &y in b {
            let d = y as i64 - x as i64;
            if d >= lo && d < hi {
                out[edges.partition_point(|&e| e <= d) - 1] += 1;
            }
        }
    }
    out
}

fn criterion_5() -> Outcome {
    let mut o = Outcome::new();
    const PERIOD: u64 = 400_000;
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let cfg = CorrelationConfig::default().aligned(PERIOD);
    let pulsed = PulsedConfig::default();
    let (mut streams, mut mismatches) = (0, 0);
    for case in 0..55 {
        let n = rng.random_range(500..=10_000);
        let duration: u64 = if case % 2 == 0 {
            110_000_000_000
        } else {
            2_000_000_000
        };
        let pulses = duration / PERIOD;
        let tags: Vec<Tag> = (0..n)
            .map(|_| {
                let t = if rng.random_bool(0.3) {
                    rng.random_range(0..duration)
                } else {
                    rng.random_range(0..pulses) * PERIOD + rng.random_range(0..120_000)
                };
                Tag::new(rng.random_range(1..=2), t.min(duration))
            })
            .collect();
        let s = TimeTagStream::from_unsorted(tags, StreamMeta::new(PERIOD, duration)).unwrap();
        let (a, b) = (channel_stream(&s, 1), channel_stream(&s, 2));
        let (ta, tb) = (a.channel_times(1), b.channel_times(2));
        let curve = log_g2(&a, &b, &cfg).unwrap();
        let acf = match pulsed_acf(&s, PERIOD, 1.0, &pulsed) {
            Ok(acf) => acf,
            Err(CorrelationError::InsufficientStatistics { partial, .. }) => *partial,
            Err(e) => panic!("{e}"),
        };
        let k = i64::from(pulsed.periods);
        let peak_edges: Vec<i64> = (-k..=k + 1)
            .map(|m| m * PERIOD as i64 - PERIOD as i64 / 2)
            .collect();
        streams += 1;
        if curve.coincidences != brute(&ta, &tb, &curve.edges_ps)
            || acf.peak_counts != brute(&ta, &tb, &peak_edges)
        {
            mismatches += 1;
        }
    }
    o.check(
        "log_g2 and pulsed_acf counts equal pair enumeration",
        streams >= 50 && mismatches == 0,
        format!("{streams} streams, {mismatches} mismatches"),
    );
    o
}

fn criterion_6() -> Outcome {
    let mut o = Outcome::new();
    let q2_grid = [0.01, 0.02, 0.05, 0.1, 0.106, 0.2, 0.3, 0.4, 0.5];
    let m_grid = [0.05, 0.1, 0.2, 0.3, 0.4, 0.5, 0.7, 1.0];
    let mut worst_factor: f64 = 0.0;
    let mut worst_at_04: (f64, f64) = (0.0, 0.0);
    for &m in &m_grid {
        let pump = ExcitationModel::new(m).unwrap();
        let (p1, p2) = (pump.p_at_least(1), pump.p_at_least(2));
        for &q2 in &q2_grid {
            let g = general_g2_zero(&pump, &YieldLadder::new(vec![1.0, q2]).unwrap()).unwrap();
            let simple = poisson_weight(m).unwrap() * q2;
            let correction = (1.0 + q2 * p2 / p1).powi(-2);
            worst_factor = worst_factor.max((g / simple / correction - 1.0).abs());
            if m == 0.4 {
                let dev = (g / simple - 1.0).abs();
                if dev > worst_at_04.0 {
                    worst_at_04 = (dev, q2);
                }
            }
        }
    }
    o.check(
        "ladder [1, Q2] equals weight·Q2 times the truncation factor",
        worst_factor < 1e-12,
        format!("max relative residual {worst_factor:.2e}"),
    );
    o.check(
        "relative deviation at <N> = 0.4 below 2 % for every Q2 in the grid",
        worst_at_04.0 < 0.02,
        format!(
            "max {:.2} % at Q2 = {}",
            100.0 * worst_at_04.0,
            worst_at_04.1
        ),
    );

    let pump = ExcitationModel::new(0.4).unwrap();
    let ratio = pump.p_at_least(2) / pump.p_at_least(1);
    let largest_ok = q2_grid
        .iter()
        .copied()
        .filter(|q| 1.0 - (1.0 + q * ratio).powi(-2) < 0.02)
        .fold(0.0, f64::max);
    o.lines.push(format!(
        "    note: at <N> = 0.4 the deviation is {:.2} % for Q2 = 0.106; below 2 % only up to Q2 = {largest_ok}",
        100.0 * (1.0 - (1.0 + 0.106 * ratio).powi(-2))
    ));

    let mut worst_enum: f64 = 0.0;
    for &m in &m_grid {
        let ladder = vec![1.0; 16];
        let g = general_g2_zero(
            &ExcitationModel::new(m).unwrap(),
            &YieldLadder::new(ladder).unwrap(),
        )
        .unwrap();
        // all-ones ladder: photons = pairs, so g2 = E[N(N-1)] / E[N]^2 summed term by term
        let (mut first, mut second, mut pn) = (0.0, 0.0, (-m).exp());
        for n in 0..60u32 {
            if n > 0 {
                pn *= m / f64::from(n);
            }
            let k = f64::from(n.min(16));
            first += pn * k;
            second += pn * k * (k - 1.0);
        }
        worst_enum = worst_enum.max((g - second / (first * first)).abs());
    }
    o.check(
        "all-ones ladder vs enumeration",
        worst_enum < 1e-6,
        format!("max |diff| {worst_enum:.2e}"),
    );
    o
}

fn criterion_7() -> Outcome {
    let mut o = Outcome::new();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut t = 0u64;
    let tags: Vec<Tag> = (0..1_000_000)
        .map(|_| {
            t += rng.random_range(0..2_000_000);
            Tag::new(rng.random_range(1..=2), t)
        })
        .collect();
    let s = TimeTagStream::new(tags, StreamMeta::new(400_000, t + 1)).unwrap();

    let mut bytes = Vec::new();
    write_tags(&s, &mut bytes).unwrap();
    let back = read_tags(bytes.as_slice()).unwrap();
    let mut again = Vec::new();
    write_tags(&back, &mut again).unwrap();
    o.check(
        "binary read(write(s)) == s",
        back == s,
        format!("{} tags", back.len()),
    );
    o.check(
        "binary bytes identical after re-write",
        again == bytes,
        format!("{} bytes", bytes.len()),
    );

    let mut text = Vec::new();
    write_tags_csv(&s, &mut text).unwrap();
    let back = read_tags(text.as_slice()).unwrap();
    o.check(
        "csv read(write(s)) == s",
        back == s,
        format!("{} bytes", text.len()),
    );
    o
}

fn run_cli(args: &[&str], threads: &str) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_qdstat"))
        .args(args)
        .env(qdstat::cli::THREADS_ENV, threads)
        .output()
        .expect("binary runs")
        .status
        .code()
        .unwrap_or(-1)
}

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                fs::read(e.path()).unwrap(),
            )
        })
        .collect();
    files.sort();
    files
}

fn criterion_8() -> Outcome {
    let mut o = Outcome::new();
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = d.join("run.toml");
    fs::write(
        &cfg,
        "preset = \"dr1\"\n[acquisition]\nduration_s = 5.0\nseed = 8\n",
    )
    .unwrap();
    let cfg = cfg.to_str().unwrap();
    let (t1, t2) = (d.join("a.tags"), d.join("b.tags"));
    let c1 = run_cli(
        &["simulate", "--config", cfg, "--out", t1.to_str().unwrap()],
        "1",
    );
    let c2 = run_cli(
        &["simulate", "--config", cfg, "--out", t2.to_str().unwrap()],
        "4",
    );
    let same = c1 == 0 && c2 == 0 && fs::read(&t1).unwrap() == fs::read(&t2).unwrap();
    o.check(
        "simulate twice: identical files",
        same,
        format!("exit {c1}/{c2}"),
    );

    let (o1, o4) = (d.join("t1").join("DR1"), d.join("t4").join("DR1"));
    let a1 = run_cli(
        &[
            "analyze",
            "--tags",
            t1.to_str().unwrap(),
            "--config",
            cfg,
            "--outdir",
            o1.to_str().unwrap(),
        ],
        "1",
    );
    let a4 = run_cli(
        &[
            "analyze",
            "--tags",
            t1.to_str().unwrap(),
            "--config",
            cfg,
            "--outdir",
            o4.to_str().unwrap(),
        ],
        "4",
    );
    let (f1, f4) = (dir_contents(&o1), dir_contents(&o4));
    let differing: Vec<&str> = f1
        .iter()
        .zip(&f4)
        .filter(|(x, y)| x != y)
        .map(|(x, _)| x.0.as_str())
        .collect();
    o.check(
        "analyze with 1 and 4 threads: identical outputs",
        a1 == a4 && f1.len() == f4.len() && differing.is_empty(),
        format!(
            "exit {a1}/{a4}, {} files, differing {differing:?}",
            f1.len()
        ),
    );
    o
}

fn main() {
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let cl = closed_loop();
    let results = [
        ("1 algebraic yield table", criterion_1()),
        ("2 Poisson weight", criterion_2()),
        ("3 closed-loop DR1 recovery", criterion_3(&cl)),
        ("4 post-selection purity", criterion_4(&cl)),
        ("5 correlator oracle equivalence", criterion_5()),
        ("6 ladder oracle", criterion_6()),
        ("7 tag format round trip", criterion_7()),
        ("8 determinism", criterion_8()),
    ];
    let mut failed = 0;
    for (name, r) in &results {
        println!(
            "{} criterion {name}",
            if r.passed { "PASS" } else { "FAIL" }
        );
        for l in &r.lines {
            println!("{l}");
        }
        failed += usize::from(!r.passed);
    }
    println!(
        "\n{} of {} criteria passed",
        results.len() - failed,
        results.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
