//! Zero-delay antibunching from the pulsed correlation peaks, with confidence
//! intervals, for photons of each state.

use qdstat::config::RunConfig;
use qdstat::correlate::{
    channel_stream, g2_zero_with_ci, log_g2, pulsed_acf, CorrelationConfig, CONFIDENCE,
};
use qdstat::physics::{general_g2_zero, ExcitationModel, YieldLadder};
use qdstat::simulate::simulate_stream;
use qdstat::trace::{bin_counts, post_select, StateWindows};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let run = RunConfig::preset("dr1")?;
    let model = run.emitter_model()?;
    let sim = simulate_stream(&model, &run.detector, 20.0, run.acquisition.seed)?;
    let rep = run.excitation.rep_period_ps;

    let trace = bin_counts(&sim.stream, run.analysis.bin_width_us)?;
    let sel = post_select(
        &sim.stream,
        &trace,
        &StateWindows::manual(40.0, 70.0, trace.bin_width_ps)?,
    )?;

    let pump = ExcitationModel::new(0.4)?;
    let p = &model.physics;
    let bright_model = general_g2_zero(&pump, &YieldLadder::new(vec![1.0, p.biexciton_qy()])?)?;
    let grey_model = general_g2_zero(
        &pump,
        &YieldLadder::new(vec![p.trion_qy(), p.biexciton_qy()])?,
    )?;

    let lags = CorrelationConfig {
        min_lag_ps: 1_000_000,
        max_lag_ps: 10_000_000,
        bins_per_decade: 4,
        align_period_ps: Some(rep),
    };
    for (name, s, theory) in [
        ("all", &sim.stream, None),
        ("bright", &sel.bright, Some(bright_model)),
        ("grey", &sel.grey, Some(grey_model)),
    ] {
        // side peaks sit on the flicker plateau, so they are scaled to its level
        let plateau = log_g2(&channel_stream(s, 1), &channel_stream(s, 2), &lags)?
            .mean_g2_over(1_000_000, 10_000_000)
            .unwrap_or(1.0);
        let acf = pulsed_acf(s, rep, plateau, &run.analysis.pulsed)?;
        let (g, (lo, hi)) = g2_zero_with_ci(&acf);
        print!(
            "{name:>6}: g2(0) = {g:.4}  [{lo:.4}, {hi:.4}] at {:.2} %, {} zero-peak pairs, plateau {plateau:.3}",
            100.0 * CONFIDENCE,
            acf.zero_peak_counts()
        );
        match theory {
            Some(t) => println!("  (model {t:.4})"),
            None => println!(),
        }
    }
    Ok(())
}
