//! Simulates the DR1 preset and writes the tags to a binary file.
//!
//! `cargo run --release --example simulate_dr1 -- [seconds] [out.tags]`

use std::path::PathBuf;

use qdstat::config::RunConfig;
use qdstat::simulate::{simulate_stream, EmitterState};
use qdstat::timetags::write_tags_file;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seconds: f64 = args.next().map_or(Ok(5.0), |s| s.parse())?;
    let out = args
        .next()
        .map_or_else(|| std::env::temp_dir().join("dr1.tags"), PathBuf::from);

    let cfg = RunConfig::preset("dr1")?;
    let model = cfg.emitter_model()?;
    let sim = simulate_stream(&model, &cfg.detector, seconds, cfg.acquisition.seed)?;

    let s = &sim.stats;
    println!(
        "pulses {}  excited {}  emitted {}",
        s.pulses, s.excited_pulses, s.emitted_photons
    );
    println!(
        "detected {}  dark {}  lost to dead time {}",
        s.detected_signal, s.dark_counts, s.lost_to_dead_time
    );
    let bright = sim
        .labels
        .iter()
        .filter(|&&l| l == EmitterState::Neutral)
        .count();
    println!(
        "bright occupancy {:.3} (model {:.3}), {:.1} % of tags from the bright state, {} switches",
        sim.trajectory.bright_fraction(),
        model.bright_occupancy(),
        100.0 * bright as f64 / sim.stream.len() as f64,
        sim.trajectory.switches.len()
    );
    let bytes = write_tags_file(&out, &sim.stream)?;
    println!(
        "{} tags, {} bytes -> {}",
        sim.stream.len(),
        bytes,
        out.display()
    );
    Ok(())
}
