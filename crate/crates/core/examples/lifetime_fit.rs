//! Decay curves folded on the laser period and Poisson maximum-likelihood
//! mono-exponential fits for each state.

use qdstat::config::RunConfig;
use qdstat::lifetime::{decay_histogram, fit_monoexp};
use qdstat::simulate::simulate_stream;
use qdstat::trace::{bin_counts, post_select, StateWindows};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for preset in ["dr1", "dr2"] {
        let run = RunConfig::preset(preset)?;
        let model = run.emitter_model()?;
        let sim = simulate_stream(&model, &run.detector, 5.0, run.acquisition.seed)?;
        let rep = run.excitation.rep_period_ps;
        let trace = bin_counts(&sim.stream, run.analysis.bin_width_us)?;
        let qdstat::trace::WindowPolicy::Manual {
            grey_below_per_ms,
            bright_above_per_ms,
        } = run.analysis.window
        else {
            unreachable!("presets use manual windows")
        };
        let windows =
            StateWindows::manual(grey_below_per_ms, bright_above_per_ms, trace.bin_width_ps)?;
        let sel = post_select(&sim.stream, &trace, &windows)?;

        println!(
            "{preset}: model tau_X {:.1} ns, tau_X- {:.1} ns",
            model.physics.tau_x(),
            model.physics.tau_trion()
        );
        for (name, s, window) in [
            ("all", &sim.stream, run.analysis.fit_window_all_ns),
            ("bright", &sel.bright, run.analysis.fit_window_bright_ns),
            ("grey", &sel.grey, run.analysis.fit_window_grey_ns),
        ] {
            let curve = decay_histogram(s, rep, run.analysis.decay_bin_ns)?;
            let fit = fit_monoexp(&curve, window)?;
            println!(
                "  {name:>6}: tau {:.2} ± {:.2} ns, background {:.1}/bin, reduced chi2 {:.2}, {} counts",
                fit.tau_ns, fit.tau_se_ns, fit.background, fit.reduced_chi2, fit.counts_in_window
            );
        }
    }
    Ok(())
}
