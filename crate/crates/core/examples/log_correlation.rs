//! Cross-channel g² over six decades of lag, before and after post-selection.

use qdstat::config::RunConfig;
use qdstat::correlate::{channel_stream, log_g2, CorrelationConfig};
use qdstat::simulate::simulate_stream;
use qdstat::timetags::TimeTagStream;
use qdstat::trace::{bin_counts, post_select, StateWindows};

fn curve(
    name: &str,
    s: &TimeTagStream,
    cfg: &CorrelationConfig,
) -> Result<(), Box<dyn std::error::Error>> {
    let c = log_g2(&channel_stream(s, 1), &channel_stream(s, 2), cfg)?;
    print!("{name:>7}");
    for (lo, hi) in [
        (1e6, 1e7),
        (1e8, 1e9),
        (1e9, 1e10),
        (1e10, 3e10),
        (3e10, 1e11),
    ] {
        match c.mean_g2_over(lo as i64, hi as i64) {
            Some(g) => print!(" {g:>8.4}"),
            None => print!(" {:>8}", "-"),
        }
    }
    println!();
    Ok(())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let run = RunConfig::preset("dr1")?;
    let sim = simulate_stream(
        &run.emitter_model()?,
        &run.detector,
        20.0,
        run.acquisition.seed,
    )?;
    let cfg = CorrelationConfig::default().aligned(run.excitation.rep_period_ps);

    let trace = bin_counts(&sim.stream, run.analysis.bin_width_us)?;
    let windows = StateWindows::manual(40.0, 70.0, trace.bin_width_ps)?;
    let sel = post_select(&sim.stream, &trace, &windows)?;

    println!(
        "{:>7} {:>8} {:>8} {:>8} {:>8} {:>8}",
        "lags", "1-10us", "0.1-1ms", "1-10ms", "10-30ms", "30-100ms"
    );
    curve("all", &sim.stream, &cfg)?;
    curve("bright", &sel.bright, &cfg)?;
    curve("grey", &sel.grey, &cfg)?;
    Ok(())
}
