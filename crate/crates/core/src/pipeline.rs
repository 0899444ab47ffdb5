//! The full analysis of one acquisition: binning, state windows,
//! post-selection, decays, correlations and the yield report.
//!
//! Every stage records its outcome; a failed stage leaves the others intact.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::AnalysisConfig;
use crate::correlate::{
    channel_stream, g2_zero_with_ci, log_g2, pulsed_acf, CorrelationCurve, CorrelationError,
    PulsedAcf,
};
use crate::lifetime::{decay_histogram, fit_monoexp, DecayCurve, ExpFit};
use crate::report::{build_report, StateIntensity, YieldReport};
use crate::timetags::TimeTagStream;
use crate::trace::{
    bin_counts, fit_two_poisson, post_select, select_windows, Fractions, IntensityHistogram,
    IntensityTrace, PoissonMixture, PostSelection, StateWindows, WindowPolicy,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StageStatus {
    pub stage: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl StageStatus {
    fn ok(stage: String) -> Self {
        StageStatus {
            stage,
            ok: true,
            message: None,
        }
    }

    fn failed(stage: String, message: impl ToString) -> Self {
        StageStatus {
            stage,
            ok: false,
            message: Some(message.to_string()),
        }
    }
}

/// Products computed for one photon subset (all, bright or grey).
#[derive(Debug, Clone)]
pub struct SubsetAnalysis {
    pub name: &'static str,
    pub photons: usize,
    pub decay: Option<DecayCurve>,
    pub fit: Option<ExpFit>,
    pub g2: Option<CorrelationCurve>,
    pub long_delay_g2: Option<f64>,
    /// May hold a partial result when the statistics were insufficient.
    pub acf: Option<PulsedAcf>,
    pub acf_complete: bool,
    pub stages: Vec<StageStatus>,
}

fn record<T, E: ToString>(
    stages: &mut Vec<StageStatus>,
    stage: String,
    r: Result<T, E>,
) -> Option<T> {
    match r {
        Ok(v) => {
            stages.push(StageStatus::ok(stage));
            Some(v)
        }
        Err(e) => {
            stages.push(StageStatus::failed(stage, e));
            None
        }
    }
}

fn analyze_subset(
    name: &'static str,
    stream: &TimeTagStream,
    rep_period_ps: u64,
    fit_window: Option<(f64, f64)>,
    cfg: &AnalysisConfig,
) -> SubsetAnalysis {
    let mut stages = Vec::new();
    let decay = record(
        &mut stages,
        format!("decay_{name}"),
        decay_histogram(stream, rep_period_ps, cfg.decay_bin_ns),
    );
    let fit = decay.as_ref().and_then(|d| {
        record(
            &mut stages,
            format!("fit_{name}"),
            fit_monoexp(d, fit_window),
        )
    });

    let correlation = if rep_period_ps > 0 {
        cfg.correlation.aligned(rep_period_ps)
    } else {
        cfg.correlation
    };
    let g2 = record(
        &mut stages,
        format!("g2_{name}"),
        log_g2(
            &channel_stream(stream, 1),
            &channel_stream(stream, 2),
            &correlation,
        ),
    );
    let (lo, hi) = cfg.long_delay_ns;
    let long_delay_g2 = g2
        .as_ref()
        .and_then(|c| c.mean_g2_over((lo * 1e3) as i64, (hi * 1e3) as i64));

    let (acf, acf_complete) = match pulsed_acf(
        stream,
        rep_period_ps,
        long_delay_g2.unwrap_or(1.0),
        &cfg.pulsed,
    ) {
        Ok(a) => {
            stages.push(StageStatus::ok(format!("acf_{name}")));
            (Some(a), true)
        }
        Err(CorrelationError::InsufficientStatistics { total, partial }) => {
            stages.push(StageStatus::failed(
                format!("acf_{name}"),
                CorrelationError::InsufficientStatistics {
                    total,
                    partial: partial.clone(),
                },
            ));
            (Some(*partial), false)
        }
        Err(e) => {
            stages.push(StageStatus::failed(format!("acf_{name}"), e));
            (None, false)
        }
    };
    SubsetAnalysis {
        name,
        photons: stream.len(),
        decay,
        fit,
        g2,
        long_delay_g2,
        acf,
        acf_complete,
        stages,
    }
}

#[derive(Debug, Clone)]
pub struct Analysis {
    pub rep_period_ps: u64,
    pub trace: IntensityTrace,
    pub histogram: IntensityHistogram,
    pub mixture: Option<PoissonMixture>,
    pub windows: Option<StateWindows>,
    pub selection: Option<PostSelection>,
    pub all: SubsetAnalysis,
    pub bright: Option<SubsetAnalysis>,
    pub grey: Option<SubsetAnalysis>,
    pub report: Option<YieldReport>,
    pub stages: Vec<StageStatus>,
}

impl Analysis {
    pub fn failed_stages(&self) -> impl Iterator<Item = &StageStatus> {
        self.stages.iter().filter(|s| !s.ok)
    }

    pub fn fractions(&self) -> Option<Fractions> {
        self.selection.as_ref().map(|s| s.fractions)
    }

    pub fn state_intensities(&self) -> Option<(StateIntensity, StateIntensity)> {
        let m = self.mixture.as_ref()?;
        let per_ms = |c| self.trace.per_ms(c);
        Some((
            StateIntensity {
                occupancy: m.bright.weight,
                counts_per_ms: per_ms(m.bright.mean),
            },
            StateIntensity {
                occupancy: m.grey.weight,
                counts_per_ms: per_ms(m.grey.mean),
            },
        ))
    }
}

/// Runs every stage. Fails only if the stream cannot be binned at all.
pub fn analyze(
    stream: &TimeTagStream,
    rep_period_ps: u64,
    cfg: &AnalysisConfig,
    mean_excitations: f64,
) -> Result<Analysis, crate::trace::TraceError> {
    let mut stages = Vec::new();
    let trace = bin_counts(stream, cfg.bin_width_us)?;
    stages.push(StageStatus::ok("trace".into()));
    let histogram = trace.histogram();
    let mixture = record(&mut stages, "mixture".into(), fit_two_poisson(&histogram));

    let windows = match (&cfg.window, &mixture) {
        (
            WindowPolicy::Manual {
                grey_below_per_ms,
                bright_above_per_ms,
            },
            _,
        ) => StateWindows::manual(*grey_below_per_ms, *bright_above_per_ms, trace.bin_width_ps)
            .map_err(|e| e.to_string()),
        (policy, Some(m)) => {
            select_windows(m, policy, trace.bin_width_ps).map_err(|e| e.to_string())
        }
        (_, None) => Err("posterior windows need a bimodal mixture".to_string()),
    };
    let windows = record(&mut stages, "windows".into(), windows);
    let selection = windows.as_ref().and_then(|w| {
        record(
            &mut stages,
            "post_selection".into(),
            post_select(stream, &trace, w),
        )
    });

    let (all, (bright, grey)) = rayon::join(
        || analyze_subset("all", stream, rep_period_ps, cfg.fit_window_all_ns, cfg),
        || match &selection {
            Some(sel) => rayon::join(
                || {
                    Some(analyze_subset(
                        "bright",
                        &sel.bright,
                        rep_period_ps,
                        cfg.fit_window_bright_ns,
                        cfg,
                    ))
                },
                || {
                    Some(analyze_subset(
                        "grey",
                        &sel.grey,
                        rep_period_ps,
                        cfg.fit_window_grey_ns,
                        cfg,
                    ))
                },
            ),
            None => (None, None),
        },
    );
    for s in [Some(&all), bright.as_ref(), grey.as_ref()]
        .into_iter()
        .flatten()
    {
        stages.extend(s.stages.iter().cloned());
    }

    let mut analysis = Analysis {
        rep_period_ps,
        trace,
        histogram,
        mixture,
        windows,
        selection,
        all,
        bright,
        grey,
        report: None,
        stages,
    };

    let inputs = (|| {
        let b = analysis.bright.as_ref()?;
        let g = analysis.grey.as_ref()?;
        if !(b.acf_complete && g.acf_complete) {
            return None;
        }
        Some((b.fit?, g.fit?, b.acf.clone()?, g.acf.clone()?))
    })();
    let report = match inputs {
        Some((bf, gf, ba, ga)) => build_report(
            &bf,
            &gf,
            &ba,
            &ga,
            analysis
                .all
                .acf
                .as_ref()
                .filter(|_| analysis.all.acf_complete),
            analysis.fractions(),
            analysis.state_intensities(),
            mean_excitations,
            cfg.q_x_assumed,
        )
        .map_err(|e| e.to_string()),
        None => Err("bright and grey lifetimes and g2(0) are required".to_string()),
    };
    analysis.report = record(&mut analysis.stages, "report".into(), report);
    Ok(analysis)
}

#[derive(Serialize)]
struct WindowsRecord {
    grey_upper_counts_per_bin: f64,
    bright_lower_counts_per_bin: f64,
    grey_upper_per_ms: f64,
    bright_lower_per_ms: f64,
}

#[derive(Serialize)]
struct StatesRecord<'a> {
    bin_width_us: f64,
    mixture: Option<&'a PoissonMixture>,
    windows: Option<WindowsRecord>,
    fractions: Option<Fractions>,
}

#[derive(Serialize)]
struct AcfRecord {
    g2_zero: f64,
    ci_low: f64,
    ci_high: f64,
    zero_peak_counts: u64,
    normalization: f64,
    long_delay_g2: f64,
    complete: bool,
}

#[derive(Serialize)]
struct SubsetRecord<'a> {
    photons: usize,
    fit: Option<&'a ExpFit>,
    long_delay_g2: Option<f64>,
    acf: Option<AcfRecord>,
}

fn write_file(
    dir: &Path,
    name: &str,
    written: &mut Vec<PathBuf>,
    f: impl FnOnce(&mut BufWriter<File>) -> io::Result<()>,
) -> io::Result<()> {
    let path = dir.join(name);
    let mut w = BufWriter::new(File::create(&path)?);
    f(&mut w)?;
    w.flush()?;
    written.push(path);
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("analysis records serialize");
    s.push('\n');
    s
}

/// Writes every available product into `dir`; returns the paths written.
pub fn write_outputs(analysis: &Analysis, dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    write_file(dir, "trace.csv", &mut written, |w| {
        analysis.trace.write_csv(w)
    })?;
    write_file(dir, "histogram.csv", &mut written, |w| {
        analysis.histogram.write_csv(w)
    })?;
    let states = StatesRecord {
        bin_width_us: analysis.trace.bin_width_us(),
        mixture: analysis.mixture.as_ref(),
        windows: analysis.windows.map(|w| WindowsRecord {
            grey_upper_counts_per_bin: w.grey_upper,
            bright_lower_counts_per_bin: w.bright_lower,
            grey_upper_per_ms: w.grey_upper_per_ms(),
            bright_lower_per_ms: w.bright_lower_per_ms(),
        }),
        fractions: analysis.fractions(),
    };
    write_file(dir, "states.json", &mut written, |w| {
        w.write_all(to_json(&states).as_bytes())
    })?;

    let mut subsets = serde_json::Map::new();
    for s in [
        Some(&analysis.all),
        analysis.bright.as_ref(),
        analysis.grey.as_ref(),
    ]
    .into_iter()
    .flatten()
    {
        if let Some(d) = &s.decay {
            write_file(dir, &format!("decay_{}.csv", s.name), &mut written, |w| {
                d.write_csv(w)
            })?;
        }
        if let Some(c) = &s.g2 {
            write_file(dir, &format!("g2_{}.csv", s.name), &mut written, |w| {
                c.write_csv(w)
            })?;
        }
        if let Some(a) = &s.acf {
            write_file(
                dir,
                &format!("acf_{}_peaks.csv", s.name),
                &mut written,
                |w| a.write_peaks_csv(w),
            )?;
            write_file(
                dir,
                &format!("acf_{}_histogram.csv", s.name),
                &mut written,
                |w| a.write_histogram_csv(w),
            )?;
        }
        let acf = s.acf.as_ref().map(|a| {
            let (g2_zero, (ci_low, ci_high)) = g2_zero_with_ci(a);
            AcfRecord {
                g2_zero,
                ci_low,
                ci_high,
                zero_peak_counts: a.zero_peak_counts(),
                normalization: a.normalization,
                long_delay_g2: a.long_delay_g2,
                complete: s.acf_complete,
            }
        });
        let record = SubsetRecord {
            photons: s.photons,
            fit: s.fit.as_ref(),
            long_delay_g2: s.long_delay_g2,
            acf,
        };
        subsets.insert(
            s.name.to_string(),
            serde_json::to_value(record).expect("subset serializes"),
        );
    }
    write_file(dir, "subsets.json", &mut written, |w| {
        w.write_all(to_json(&subsets).as_bytes())
    })?;

    if let Some(r) = &analysis.report {
        write_file(dir, "report.json", &mut written, |w| {
            w.write_all(r.to_json().as_bytes())
        })?;
        let emitter = dir
            .file_name()
            .map_or("emitter".into(), |n| n.to_string_lossy().into_owned());
        write_file(dir, "report.csv", &mut written, |w| {
            writeln!(w, "{}", YieldReport::CSV_HEADER)?;
            r.write_csv_row(w, &emitter)
        })?;
    }
    write_file(dir, "stages.json", &mut written, |w| {
        w.write_all(to_json(&analysis.stages).as_bytes())
    })?;
    Ok(written)
}
