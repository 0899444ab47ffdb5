//! Closed-form photophysics of a pulsed nanocrystal emitter.
//!
//! Units: rates in ns⁻¹, times in ns, intensities in counts/ms.
//!
//! The excitation statistics assume a Poissonian number of electron-hole
//! pairs per pulse. The quantum-yield algebra maps measured lifetimes and
//! zero-delay correlations onto trion and biexciton yields, and the Auger
//! inversion turns those yields back into non-radiative rates.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Ladder sums stop once `P(N >= m)` falls below this fraction of `P(N >= 1)`.
pub const LADDER_TRUNCATION: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PhysicsError {
    #[error("`{name}` must be {requirement}, got {value}")]
    OutOfRange {
        name: &'static str,
        requirement: &'static str,
        value: f64,
    },
    #[error("mean excitation 0 makes the Poisson weight 0/0; use the limit value 1")]
    ZeroMeanWeight,
    #[error("zero denominator in {0}")]
    ZeroDenominator(&'static str),
}

/// A model violation that does not stop the computation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Inconsistency {
    /// A quantum yield above one.
    YieldAboveOne { quantity: String, value: f64 },
    /// A rate that came out negative.
    NegativeRate { quantity: String, value: f64 },
    /// A degenerate but admissible corner of the model (infinite Auger time etc).
    LimitCase { quantity: String, note: String },
    /// Two independent estimates of the same quantity disagree.
    Mismatch {
        check: String,
        expected: f64,
        observed: f64,
        tolerance: f64,
    },
}

impl fmt::Display for Inconsistency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inconsistency::YieldAboveOne { quantity, value } => {
                write!(f, "{quantity} = {value:.4} exceeds 1")
            }
            Inconsistency::NegativeRate { quantity, value } => {
                write!(f, "{quantity} = {value:.4} ns^-1 is negative")
            }
            Inconsistency::LimitCase { quantity, note } => write!(f, "{quantity}: {note}"),
            Inconsistency::Mismatch {
                check,
                expected,
                observed,
                tolerance,
            } => write!(
                f,
                "{check}: expected {expected:.4}, observed {observed:.4} (tolerance {tolerance})"
            ),
        }
    }
}

/// A derived value together with any model violations found while computing it.
#[derive(Debug, Clone, PartialEq)]
pub struct Flagged<T> {
    pub value: T,
    pub flags: Vec<Inconsistency>,
}

impl<T> Flagged<T> {
    fn clean(value: T) -> Self {
        Flagged {
            value,
            flags: Vec::new(),
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.flags.is_empty()
    }
}

fn check_range(
    name: &'static str,
    requirement: &'static str,
    value: f64,
    ok: bool,
) -> Result<(), PhysicsError> {
    if ok && value.is_finite() {
        Ok(())
    } else {
        Err(PhysicsError::OutOfRange {
            name,
            requirement,
            value,
        })
    }
}

/// Probability that a Poisson variable of the given mean is at least `m`.
///
/// Below the mode the upper tail is summed directly, above it the lower
/// sum is complemented, so neither branch subtracts nearly equal numbers.
pub fn p_at_least(m: u32, mean: f64) -> f64 {
    if m == 0 {
        return 1.0;
    }
    if mean <= 0.0 {
        return 0.0;
    }
    if mean < f64::from(m) + 1.0 {
        // first tail term e^-mean mean^m / m!, accumulated in log space
        let log_first = f64::from(m) * mean.ln() - mean - ln_factorial(m);
        let mut term = log_first.exp();
        let mut sum = 0.0;
        let mut k = m;
        while term > sum * 1e-17 && term > 0.0 {
            sum += term;
            k += 1;
            term *= mean / f64::from(k);
        }
        sum.min(1.0)
    } else {
        let mut term = (-mean).exp();
        let mut cumulative = 0.0;
        for k in 0..m {
            if k > 0 {
                term *= mean / f64::from(k);
            }
            cumulative += term;
        }
        (1.0 - cumulative).max(0.0)
    }
}

fn ln_factorial(m: u32) -> f64 {
    (1..=m).map(|k| f64::from(k).ln()).sum()
}

/// `2 P(N>=2) / P(N>=1)^2`, the pump-dependent factor between `g2(0)` and `Q_2/Q_1`.
pub fn poisson_weight(mean: f64) -> Result<f64, PhysicsError> {
    if mean == 0.0 {
        return Err(PhysicsError::ZeroMeanWeight);
    }
    check_range("mean_excitations", "> 0", mean, mean > 0.0)?;
    let p1 = p_at_least(1, mean);
    let p2 = p_at_least(2, mean);
    Ok(2.0 * p2 / (p1 * p1))
}

/// Mean number of electron-hole pairs created per pulse.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExcitationModel {
    mean_excitations: f64,
}

impl ExcitationModel {
    pub fn new(mean_excitations: f64) -> Result<Self, PhysicsError> {
        check_range(
            "mean_excitations",
            ">= 0",
            mean_excitations,
            mean_excitations >= 0.0,
        )?;
        Ok(ExcitationModel { mean_excitations })
    }

    pub fn mean(&self) -> f64 {
        self.mean_excitations
    }

    pub fn p_at_least(&self, m: u32) -> f64 {
        p_at_least(m, self.mean_excitations)
    }

    pub fn p_exactly(&self, m: u32) -> f64 {
        let mu = self.mean_excitations;
        if mu == 0.0 {
            return if m == 0 { 1.0 } else { 0.0 };
        }
        (f64::from(m) * mu.ln() - mu - ln_factorial(m)).exp()
    }

    pub fn poisson_weight(&self) -> Result<f64, PhysicsError> {
        poisson_weight(self.mean_excitations)
    }

    /// Highest ladder order still above the truncation threshold.
    pub fn significant_order(&self) -> u32 {
        let p1 = self.p_at_least(1);
        let mut m = 1;
        while self.p_at_least(m + 1) >= LADDER_TRUNCATION * p1 && m < 1000 {
            m += 1;
        }
        m
    }
}

/// Quantum yields `Q_1, Q_2, ...` of the successive multiexciton rungs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct YieldLadder(Vec<f64>);

impl YieldLadder {
    pub fn new(yields: Vec<f64>) -> Result<Self, PhysicsError> {
        if yields.is_empty() {
            return Err(PhysicsError::OutOfRange {
                name: "ladder",
                requirement: "non-empty",
                value: 0.0,
            });
        }
        for &q in &yields {
            check_range("ladder yield", "in [0, 1]", q, (0.0..=1.0).contains(&q))?;
        }
        Ok(YieldLadder(yields))
    }

    pub fn yields(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Radiative and Auger rates of one emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmitterPhysics {
    /// Neutral exciton radiative rate, ns⁻¹.
    pub gamma_r: f64,
    /// Auger rate with the energy given to an electron, ns⁻¹.
    pub gamma_a_minus: f64,
    /// Auger rate with the energy given to a hole, ns⁻¹.
    pub gamma_a_plus: f64,
}

impl EmitterPhysics {
    pub fn new(gamma_r: f64, gamma_a_minus: f64, gamma_a_plus: f64) -> Result<Self, PhysicsError> {
        check_range("gamma_r", "> 0", gamma_r, gamma_r > 0.0)?;
        check_range("gamma_a_minus", ">= 0", gamma_a_minus, gamma_a_minus >= 0.0)?;
        check_range("gamma_a_plus", ">= 0", gamma_a_plus, gamma_a_plus >= 0.0)?;
        Ok(EmitterPhysics {
            gamma_r,
            gamma_a_minus,
            gamma_a_plus,
        })
    }

    /// From the exciton lifetime and the two Auger time constants (ns).
    /// An infinite Auger time means the channel is closed.
    pub fn from_lifetimes(
        tau_x: f64,
        tau_a_minus: f64,
        tau_a_plus: f64,
    ) -> Result<Self, PhysicsError> {
        check_range("tau_x", "> 0", tau_x, tau_x > 0.0)?;
        let inv = |name, tau: f64| -> Result<f64, PhysicsError> {
            if tau == f64::INFINITY {
                Ok(0.0)
            } else {
                check_range(name, "> 0", tau, tau > 0.0)?;
                Ok(1.0 / tau)
            }
        };
        Self::new(
            1.0 / tau_x,
            inv("tau_a_minus", tau_a_minus)?,
            inv("tau_a_plus", tau_a_plus)?,
        )
    }

    pub fn tau_x(&self) -> f64 {
        1.0 / self.gamma_r
    }

    /// Trion radiative rate, twice the exciton's by statistical scaling.
    pub fn trion_radiative_rate(&self) -> f64 {
        2.0 * self.gamma_r
    }

    pub fn trion_total_rate(&self) -> f64 {
        2.0 * self.gamma_r + self.gamma_a_minus
    }

    pub fn tau_trion(&self) -> f64 {
        1.0 / self.trion_total_rate()
    }

    pub fn trion_qy(&self) -> f64 {
        self.trion_radiative_rate() / self.trion_total_rate()
    }

    pub fn biexciton_radiative_rate(&self) -> f64 {
        4.0 * self.gamma_r
    }

    pub fn biexciton_total_rate(&self) -> f64 {
        4.0 * self.gamma_r + 2.0 * self.gamma_a_plus + 2.0 * self.gamma_a_minus
    }

    pub fn biexciton_qy(&self) -> f64 {
        self.biexciton_radiative_rate() / self.biexciton_total_rate()
    }
}

/// Trion quantum yield `2 tau_trion / tau_x` from the two measured lifetimes.
pub fn trion_qy(tau_x: f64, tau_trion: f64) -> Result<Flagged<f64>, PhysicsError> {
    check_range("tau_x", "> 0", tau_x, tau_x > 0.0)?;
    check_range("tau_trion", "> 0", tau_trion, tau_trion > 0.0)?;
    let q = 2.0 * tau_trion / tau_x;
    let mut out = Flagged::clean(q);
    if q > 1.0 + 1e-12 {
        out.flags.push(Inconsistency::YieldAboveOne {
            quantity: "Q_X-".into(),
            value: q,
        });
    }
    Ok(out)
}

/// Biexciton yield of one post-selected state from its zero-delay correlation.
pub fn biexciton_qy_from_g2(
    g2_zero: f64,
    q_exciton: f64,
    mean: f64,
) -> Result<Flagged<f64>, PhysicsError> {
    check_range("g2_zero", ">= 0", g2_zero, g2_zero >= 0.0)?;
    check_range(
        "q_exciton",
        "in (0, 1]",
        q_exciton,
        q_exciton > 0.0 && q_exciton <= 1.0,
    )?;
    let q = g2_zero * q_exciton / poisson_weight(mean)?;
    let mut out = Flagged::clean(q);
    if q > 1.0 {
        out.flags.push(Inconsistency::YieldAboveOne {
            quantity: "Q_2X".into(),
            value: q,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugerRates {
    pub gamma_a_minus: f64,
    pub gamma_a_plus: f64,
}

impl AugerRates {
    /// `None` for a closed channel (zero rate, infinite time).
    pub fn tau_a_minus(&self) -> Option<f64> {
        (self.gamma_a_minus > 0.0).then(|| 1.0 / self.gamma_a_minus)
    }

    pub fn tau_a_plus(&self) -> Option<f64> {
        (self.gamma_a_plus > 0.0).then(|| 1.0 / self.gamma_a_plus)
    }
}

/// Inverts the trion and biexciton yield relations for the two Auger rates.
pub fn auger_rates(
    gamma_r: f64,
    q_trion: f64,
    q_biexciton: f64,
) -> Result<Flagged<AugerRates>, PhysicsError> {
    check_range("gamma_r", "> 0", gamma_r, gamma_r > 0.0)?;
    check_range("q_trion", "> 0", q_trion, q_trion > 0.0)?;
    check_range("q_biexciton", "> 0", q_biexciton, q_biexciton > 0.0)?;
    let gamma_a_minus = 2.0 * gamma_r * (1.0 / q_trion - 1.0);
    let gamma_a_plus = 2.0 * gamma_r * (1.0 / q_biexciton - 1.0) - gamma_a_minus;
    let mut out = Flagged::clean(AugerRates {
        gamma_a_minus,
        gamma_a_plus,
    });
    if gamma_a_minus < 0.0 {
        out.flags.push(Inconsistency::NegativeRate {
            quantity: "gamma_A-".into(),
            value: gamma_a_minus,
        });
    }
    if gamma_a_plus < 0.0 {
        out.flags.push(Inconsistency::NegativeRate {
            quantity: "gamma_A+".into(),
            value: gamma_a_plus,
        });
    }
    Ok(out)
}

/// Zero-delay correlation of independent multiexciton rungs under Poissonian pumping.
///
/// `2 Σ_{m>1} P(N>=m) Σ_{m'<m} Q_m Q_m' / (Σ_{m>=1} P(N>=m) Q_m)²`, truncated at the
/// ladder length or where `P(N>=m)` becomes negligible.
pub fn general_g2_zero(
    excitation: &ExcitationModel,
    ladder: &YieldLadder,
) -> Result<f64, PhysicsError> {
    let q = ladder.yields();
    if q[0] <= 0.0 {
        return Err(PhysicsError::OutOfRange {
            name: "Q_1",
            requirement: "> 0",
            value: q[0],
        });
    }
    let p1 = excitation.p_at_least(1);
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    let mut lower_rungs = 0.0;
    for (i, &qm) in q.iter().enumerate() {
        let m = i as u32 + 1;
        let pm = excitation.p_at_least(m);
        if m > 1 && pm < LADDER_TRUNCATION * p1 {
            break;
        }
        numerator += 2.0 * pm * qm * lower_rungs;
        denominator += pm * qm;
        lower_rungs += qm;
    }
    if denominator <= 0.0 {
        return Err(PhysicsError::ZeroDenominator("general_g2_zero"));
    }
    Ok(numerator / (denominator * denominator))
}

/// One internally Poissonian emission state of a flickering emitter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StateStatistics {
    /// Fraction of time spent in the state.
    pub occupancy: f64,
    /// Mean intensity in counts/ms.
    pub mean_intensity: f64,
    pub g2_zero: f64,
}

/// Time-averaged zero-delay correlation of a mixture of states:
/// `Σ w I² g / (Σ w I)²`.
pub fn mixed_g2_zero(states: &[StateStatistics]) -> Result<f64, PhysicsError> {
    let mut occupancy = 0.0;
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    for s in states {
        check_range("occupancy", ">= 0", s.occupancy, s.occupancy >= 0.0)?;
        check_range(
            "mean_intensity",
            ">= 0",
            s.mean_intensity,
            s.mean_intensity >= 0.0,
        )?;
        occupancy += s.occupancy;
        numerator += s.occupancy * s.mean_intensity * s.mean_intensity * s.g2_zero;
        denominator += s.occupancy * s.mean_intensity;
    }
    check_range(
        "sum of occupancies",
        "1",
        occupancy,
        (occupancy - 1.0).abs() < 1e-6,
    )?;
    if denominator <= 0.0 {
        return Err(PhysicsError::ZeroDenominator("mixed_g2_zero"));
    }
    Ok(numerator / (denominator * denominator))
}
