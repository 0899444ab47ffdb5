//! Micro-time folding and Poisson maximum-likelihood decay fits.

use std::io::{self, Write};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::timetags::TimeTagStream;

pub const MIN_FIT_COUNTS: u64 = 100;
pub const MAX_FIT_ITERATIONS: usize = 200;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LifetimeError {
    #[error("stream has no repetition period")]
    NotPulsed,
    #[error("bin width {0} ns does not fit the repetition period")]
    BadBinWidth(f64),
    #[error("fit window {0:?} ns lies outside the decay curve")]
    BadWindow((f64, f64)),
    #[error("{found} counts in the fit window, need {MIN_FIT_COUNTS}")]
    InsufficientCounts { found: u64 },
    #[error("decay fit did not converge in {MAX_FIT_ITERATIONS} iterations")]
    NoConvergence,
}

/// Photon delays after the most recent pulse, histogrammed over one period.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecayCurve {
    pub rep_period_ps: u64,
    pub counts: Vec<u64>,
    pub total: u64,
}

impl DecayCurve {
    pub fn bin_width_ns(&self) -> f64 {
        self.rep_period_ps as f64 * 1e-3 / self.counts.len() as f64
    }

    pub fn bin_start_ns(&self, i: usize) -> f64 {
        i as f64 * self.bin_width_ns()
    }

    pub fn period_ns(&self) -> f64 {
        self.rep_period_ps as f64 * 1e-3
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "t_ns,counts")?;
        for (i, n) in self.counts.iter().enumerate() {
            writeln!(out, "{:.4},{n}", self.bin_start_ns(i))?;
        }
        Ok(())
    }
}

pub fn decay_histogram(
    stream: &TimeTagStream,
    rep_period_ps: u64,
    bin_width_ns: f64,
) -> Result<DecayCurve, LifetimeError> {
    if rep_period_ps == 0 {
        return Err(LifetimeError::NotPulsed);
    }
    let n = (rep_period_ps as f64 * 1e-3 / bin_width_ns).round();
    if n.is_nan() || n < 1.0 || !bin_width_ns.is_finite() {
        return Err(LifetimeError::BadBinWidth(bin_width_ns));
    }
    let n = n as u64;
    let mut counts = vec![0u64; n as usize];
    for tag in stream.tags() {
        let phase = tag.time_ps % rep_period_ps;
        counts[(u128::from(phase) * u128::from(n) / u128::from(rep_period_ps)) as usize] += 1;
    }
    Ok(DecayCurve {
        rep_period_ps,
        total: stream.len() as u64,
        counts,
    })
}

/// `A·exp(-(t - t0)/tau) + B` fitted on bins whose start lies in the window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub tau_ns: f64,
    pub tau_se_ns: f64,
    /// Counts per bin at the window start.
    pub amplitude: f64,
    /// Counts per bin.
    pub background: f64,
    pub window_ns: (f64, f64),
    /// Pearson chi-square per degree of freedom.
    pub reduced_chi2: f64,
    pub counts_in_window: u64,
    pub iterations: usize,
}

struct Problem {
    t: Vec<f64>,
    n: Vec<f64>,
}

impl Problem {
    fn model(&self, p: &[f64; 3], t: f64) -> f64 {
        p[0] * (-t / p[1]).exp() + p[2]
    }

    fn log_likelihood(&self, p: &[f64; 3]) -> f64 {
        self.t
            .iter()
            .zip(&self.n)
            .map(|(&t, &n)| {
                let mu = self.model(p, t);
                if n > 0.0 {
                    n * mu.ln() - mu
                } else {
                    -mu
                }
            })
            .sum()
    }

    /// Score vector and Fisher information.
    fn score_fisher(&self, p: &[f64; 3]) -> (DVector<f64>, DMatrix<f64>) {
        let mut g = DVector::zeros(3);
        let mut info = DMatrix::zeros(3, 3);
        for (&t, &n) in self.t.iter().zip(&self.n) {
            let e = (-t / p[1]).exp();
            let mu = p[0] * e + p[2];
            let d = [e, p[0] * e * t / (p[1] * p[1]), 1.0];
            for i in 0..3 {
                g[i] += (n / mu - 1.0) * d[i];
                for j in 0..3 {
                    info[(i, j)] += d[i] * d[j] / mu;
                }
            }
        }
        (g, info)
    }
}

fn restrict(g: &DVector<f64>, info: &DMatrix<f64>, free: &[usize]) -> (DVector<f64>, DMatrix<f64>) {
    let k = free.len();
    let gs = DVector::from_fn(k, |i, _| g[free[i]]);
    let is = DMatrix::from_fn(k, k, |i, j| info[(free[i], free[j])]);
    (gs, is)
}

pub fn fit_monoexp(
    curve: &DecayCurve,
    window_ns: Option<(f64, f64)>,
) -> Result<ExpFit, LifetimeError> {
    let width = curve.bin_width_ns();
    let window = match window_ns {
        Some(w) => w,
        None => {
            let peak = curve
                .counts
                .iter()
                .enumerate()
                .max_by_key(|&(i, &c)| (c, std::cmp::Reverse(i)))
                .map_or(0, |(i, _)| i);
            (curve.bin_start_ns(peak), 0.9 * curve.period_ns())
        }
    };
    if !(window.0 >= 0.0 && window.1 <= curve.period_ns() + 1e-9 && window.0 < window.1) {
        return Err(LifetimeError::BadWindow(window));
    }
    let bins: Vec<usize> = (0..curve.counts.len())
        .filter(|&i| {
            let s = curve.bin_start_ns(i);
            s >= window.0 - 1e-9 && s < window.1 - 1e-9
        })
        .collect();
    let counts_in_window: u64 = bins.iter().map(|&i| curve.counts[i]).sum();
    if counts_in_window < MIN_FIT_COUNTS || bins.len() < 4 {
        return Err(LifetimeError::InsufficientCounts {
            found: counts_in_window,
        });
    }
    let t0 = curve.bin_start_ns(bins[0]);
    let problem = Problem {
        t: bins
            .iter()
            .map(|&i| curve.bin_start_ns(i) + 0.5 * width - t0)
            .collect(),
        n: bins.iter().map(|&i| curve.counts[i] as f64).collect(),
    };

    let tail = (problem.n.len() / 10).max(1);
    let b0 = problem.n[problem.n.len() - tail..].iter().sum::<f64>() / tail as f64;
    let excess: Vec<f64> = problem.n.iter().map(|&n| (n - b0).max(0.0)).collect();
    let total_excess: f64 = excess.iter().sum();
    let span = problem.t[problem.t.len() - 1] + 0.5 * width;
    let tau0 = if total_excess > 0.0 {
        excess
            .iter()
            .zip(&problem.t)
            .map(|(e, t)| e * t)
            .sum::<f64>()
            / total_excess
    } else {
        span / 4.0
    }
    .clamp(0.5 * width, span);
    let a0 = (problem.n[0] - b0).max(1.0);
    let mut p = [a0, tau0, b0.max(0.0)];
    let mut ll = problem.log_likelihood(&p);

    let mut converged = false;
    let mut iterations = 0;
    while iterations < MAX_FIT_ITERATIONS {
        iterations += 1;
        let (g, info) = problem.score_fisher(&p);
        let free: Vec<usize> = if p[2] <= 0.0 && g[2] <= 0.0 {
            vec![0, 1]
        } else {
            vec![0, 1, 2]
        };
        let (gs, is) = restrict(&g, &info, &free);
        let Some(step) = is.clone().cholesky().map(|c| c.solve(&gs)) else {
            break;
        };
        let mut scale = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut q = p;
            for (k, &i) in free.iter().enumerate() {
                q[i] += scale * step[k];
            }
            q[2] = q[2].max(0.0);
            if q[0] > 0.0 && q[1] > 0.0 {
                let lq = problem.log_likelihood(&q);
                if lq >= ll - 1e-12 * ll.abs() {
                    accepted = Some((q, lq));
                    break;
                }
            }
            scale *= 0.5;
        }
        let Some((q, lq)) = accepted else {
            converged = true;
            break;
        };
        let rel = (0..3)
            .map(|i| (q[i] - p[i]).abs() / p[i].abs().max(1e-3))
            .fold(0.0, f64::max);
        p = q;
        let gain = lq - ll;
        ll = lq;
        if rel < 1e-9 || gain.abs() < 1e-12 * ll.abs().max(1.0) {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(LifetimeError::NoConvergence);
    }

    let (g, info) = problem.score_fisher(&p);
    let free: Vec<usize> = if p[2] <= 0.0 && g[2] <= 0.0 {
        vec![0, 1]
    } else {
        vec![0, 1, 2]
    };
    let (_, is) = restrict(&g, &info, &free);
    let tau_se_ns = is
        .try_inverse()
        .map_or(f64::NAN, |cov| cov[(1, 1)].max(0.0).sqrt());
    let chi2: f64 = problem
        .t
        .iter()
        .zip(&problem.n)
        .map(|(&t, &n)| {
            let mu = problem.model(&p, t);
            (n - mu) * (n - mu) / mu
        })
        .sum();
    let dof = (problem.n.len() - free.len()).max(1) as f64;
    Ok(ExpFit {
        tau_ns: p[1],
        tau_se_ns,
        amplitude: p[0] * (-0.5 * width / p[1]).exp(),
        background: p[2],
        window_ns: window,
        reduced_chi2: chi2 / dof,
        counts_in_window,
        iterations,
    })
}
