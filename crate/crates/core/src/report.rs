//! Table-1-style yield report assembled from the measured lifetimes and
//! zero-delay correlations.

use std::fmt::Write as _;
use std::io::{self, Write};

use serde::{Deserialize, Serialize};

use crate::correlate::PulsedAcf;
use crate::lifetime::ExpFit;
use crate::physics::{
    auger_rates, biexciton_qy_from_g2, mixed_g2_zero, trion_qy, Inconsistency, PhysicsError,
    StateStatistics,
};
use crate::trace::Fractions;

pub const INTENSITY_RATIO_TOLERANCE: f64 = 0.05;
pub const MIXED_G2_TOLERANCE: f64 = 0.03;

/// Mean intensity and time share of one emission state, from the histogram fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateIntensity {
    pub occupancy: f64,
    pub counts_per_ms: f64,
}

/// The measured quantities a report is derived from.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Measurements {
    pub tau_x_ns: f64,
    pub tau_trion_ns: f64,
    pub g2_bright_zero: f64,
    pub g2_grey_zero: f64,
    pub g2_all_zero: Option<f64>,
    pub fractions: Option<Fractions>,
    pub bright: Option<StateIntensity>,
    pub grey: Option<StateIntensity>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyCheck {
    pub name: String,
    pub expected: f64,
    pub observed: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// One emitter's row of yields and Auger times.
///
/// Auger times are `None` when the channel is closed or the rate is not
/// finite and positive; a flag then says which.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldReport {
    #[serde(rename = "tau_X_ns")]
    pub tau_x: f64,
    #[serde(rename = "tau_X-_ns")]
    pub tau_trion: f64,
    #[serde(rename = "Q_X")]
    pub q_x: f64,
    #[serde(rename = "Q_X-")]
    pub q_trion: f64,
    #[serde(rename = "Q_2X")]
    pub q_2x: f64,
    #[serde(rename = "Q_2X-")]
    pub q_2x_minus: f64,
    #[serde(rename = "tau_A-_ns")]
    pub tau_a_minus: Option<f64>,
    #[serde(rename = "tau_A+_ns")]
    pub tau_a_plus: Option<f64>,
    pub g2_bright_0: f64,
    pub g2_grey_0: f64,
    pub g2_all_0: Option<f64>,
    pub fractions: Option<Fractions>,
    pub mean_excitations: f64,
    pub checks: Vec<ConsistencyCheck>,
    pub flags: Vec<Inconsistency>,
}

impl YieldReport {
    pub fn from_measurements(
        m: &Measurements,
        mean_excitations: f64,
        q_x_assumed: f64,
    ) -> Result<Self, PhysicsError> {
        if !(q_x_assumed > 0.0 && q_x_assumed <= 1.0) {
            return Err(PhysicsError::OutOfRange {
                name: "q_x_assumed",
                requirement: "in (0, 1]",
                value: q_x_assumed,
            });
        }
        let mut flags = Vec::new();
        let q_trion = q_x_assumed * trion_qy(m.tau_x_ns, m.tau_trion_ns)?.value;
        if q_trion > 1.0 + 1e-12 {
            flags.push(Inconsistency::YieldAboveOne {
                quantity: "Q_X-".into(),
                value: q_trion,
            });
        }
        let q2x = biexciton_qy_from_g2(m.g2_bright_zero, q_x_assumed, mean_excitations)?;
        let q2x_minus = biexciton_qy_from_g2(m.g2_grey_zero, q_trion.min(1.0), mean_excitations)?;
        flags.extend(q2x.flags);
        for f in &q2x_minus.flags {
            flags.push(match f.clone() {
                Inconsistency::YieldAboveOne { value, .. } => Inconsistency::YieldAboveOne {
                    quantity: "Q_2X-".into(),
                    value,
                },
                other => other,
            });
        }

        let gamma_r = q_x_assumed / m.tau_x_ns;
        let (tau_a_minus, tau_a_plus) = if q2x.value > 0.0 {
            // NegativeRate flags are raised by closed_or_time below
            let rates = auger_rates(gamma_r, q_trion, q2x.value)?.value;
            (
                closed_or_time("tau_A-", rates.gamma_a_minus, &mut flags),
                closed_or_time("tau_A+", rates.gamma_a_plus, &mut flags),
            )
        } else {
            let gamma_a_minus = 2.0 * gamma_r * (1.0 / q_trion - 1.0);
            let minus = closed_or_time("tau_A-", gamma_a_minus, &mut flags);
            flags.push(Inconsistency::LimitCase {
                quantity: "tau_A+".into(),
                note:
                    "g2_bright(0) = 0 gives Q_2X = 0; the positive-trion Auger time is not finite"
                        .into(),
            });
            (minus, None)
        };

        let mut checks = Vec::new();
        if let (Some(b), Some(g)) = (m.bright, m.grey) {
            if b.counts_per_ms > 0.0 {
                checks.push(check(
                    "grey/bright intensity ratio vs Q_X-/Q_X",
                    q_trion / q_x_assumed,
                    g.counts_per_ms / b.counts_per_ms,
                    INTENSITY_RATIO_TOLERANCE,
                ));
            }
            if let Some(all) = m.g2_all_zero {
                let total = b.occupancy + g.occupancy;
                if total > 0.0 {
                    let state = |s: StateIntensity, g2| StateStatistics {
                        occupancy: s.occupancy / total,
                        mean_intensity: s.counts_per_ms,
                        g2_zero: g2,
                    };
                    let mixed =
                        mixed_g2_zero(&[state(b, m.g2_bright_zero), state(g, m.g2_grey_zero)])?;
                    checks.push(check(
                        "mixed-state g2(0) vs all photons",
                        mixed,
                        all,
                        MIXED_G2_TOLERANCE,
                    ));
                }
            }
        }
        for c in checks.iter().filter(|c| !c.passed) {
            flags.push(Inconsistency::Mismatch {
                check: c.name.clone(),
                expected: c.expected,
                observed: c.observed,
                tolerance: c.tolerance,
            });
        }

        Ok(YieldReport {
            tau_x: m.tau_x_ns,
            tau_trion: m.tau_trion_ns,
            q_x: q_x_assumed,
            q_trion,
            q_2x: q2x.value,
            q_2x_minus: q2x_minus.value,
            tau_a_minus,
            tau_a_plus,
            g2_bright_0: m.g2_bright_zero,
            g2_grey_0: m.g2_grey_zero,
            g2_all_0: m.g2_all_zero,
            fractions: m.fractions,
            mean_excitations,
            checks,
            flags,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub const CSV_HEADER: &'static str =
        "emitter,tau_X_ns,tau_X-_ns,Q_X,Q_X-,Q_2X,Q_2X-,tau_A-_ns,tau_A+_ns,g2_bright_0,g2_grey_0,g2_all_0,flags";

    pub fn write_csv_row<W: Write>(&self, mut out: W, emitter: &str) -> io::Result<()> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| format!("{x}"));
        writeln!(
            out,
            "{emitter},{},{},{},{},{},{},{},{},{},{},{},{}",
            self.tau_x,
            self.tau_trion,
            self.q_x,
            self.q_trion,
            self.q_2x,
            self.q_2x_minus,
            opt(self.tau_a_minus),
            opt(self.tau_a_plus),
            self.g2_bright_0,
            self.g2_grey_0,
            opt(self.g2_all_0),
            self.flags.len()
        )
    }
}

fn closed_or_time(quantity: &str, rate: f64, flags: &mut Vec<Inconsistency>) -> Option<f64> {
    if rate > 0.0 {
        Some(1.0 / rate)
    } else {
        if rate == 0.0 {
            flags.push(Inconsistency::LimitCase {
                quantity: quantity.into(),
                note: "Auger channel closed, time is infinite".into(),
            });
        } else {
            flags.push(Inconsistency::NegativeRate {
                quantity: quantity.replace("tau", "gamma"),
                value: rate,
            });
        }
        None
    }
}

fn check(name: &str, expected: f64, observed: f64, tolerance: f64) -> ConsistencyCheck {
    ConsistencyCheck {
        name: name.into(),
        expected,
        observed,
        tolerance,
        passed: (observed - expected).abs() <= tolerance,
    }
}

/// Report from the fitted analysis products of one acquisition.
#[allow(clippy::too_many_arguments)]
pub fn build_report(
    bright_fit: &ExpFit,
    grey_fit: &ExpFit,
    acf_bright: &PulsedAcf,
    acf_grey: &PulsedAcf,
    acf_all: Option<&PulsedAcf>,
    fractions: Option<Fractions>,
    states: Option<(StateIntensity, StateIntensity)>,
    mean_excitations: f64,
    q_x_assumed: f64,
) -> Result<YieldReport, PhysicsError> {
    let m = Measurements {
        tau_x_ns: bright_fit.tau_ns,
        tau_trion_ns: grey_fit.tau_ns,
        g2_bright_zero: acf_bright.g2_zero,
        g2_grey_zero: acf_grey.g2_zero,
        g2_all_zero: acf_all.map(|a| a.g2_zero),
        fractions,
        bright: states.map(|s| s.0),
        grey: states.map(|s| s.1),
    };
    YieldReport::from_measurements(&m, mean_excitations, q_x_assumed)
}

/// Plain-text table, one row per emitter, followed by any warnings.
pub fn render_table(rows: &[(String, YieldReport)]) -> String {
    let pct = |x: f64| format!("{:.1} %", 100.0 * x);
    let time = |x: Option<f64>| x.map_or("n/a".to_string(), |t| format!("{t:.1}"));
    let header = [
        "Emitter",
        "tau_X (ns)",
        "tau_X- (ns)",
        "Q_X-",
        "Q_2X",
        "Q_2X-",
        "tau_A- (ns)",
        "tau_A+ (ns)",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            vec![
                name.clone(),
                format!("{:.1}", r.tau_x),
                format!("{:.1}", r.tau_trion),
                pct(r.q_trion),
                pct(r.q_2x),
                pct(r.q_2x_minus),
                time(r.tau_a_minus),
                time(r.tau_a_plus),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..header.len())
        .map(|c| {
            body.iter()
                .map(|r| r[c].len())
                .chain([header[c].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let padded: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:>w$}"))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    let _ = writeln!(
        out,
        "{}",
        "-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1))
    );
    for r in &body {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    let flagged: Vec<_> = rows.iter().filter(|(_, r)| !r.flags.is_empty()).collect();
    if !flagged.is_empty() {
        let _ = writeln!(out, "\nWarnings:");
        for (name, r) in flagged {
            for f in &r.flags {
                let _ = writeln!(out, "  {name}: {f}");
            }
        }
    }
    let checks: Vec<_> = rows
        .iter()
        .flat_map(|(n, r)| r.checks.iter().map(move |c| (n, c)))
        .collect();
    if !checks.is_empty() {
        let _ = writeln!(out, "\nConsistency checks:");
        for (name, c) in checks {
            let _ = writeln!(
                out,
                "  {name}: {} expected {:.4} observed {:.4} [{}]",
                c.name,
                c.expected,
                c.observed,
                if c.passed { "ok" } else { "FAIL" }
            );
        }
    }
    out
}
