//! Simulate, analyze and report in one go; all products land in a directory.
//!
//! `cargo run --release --example closed_loop -- [dr1|dr2|config.toml] [outdir]`

use std::path::PathBuf;

use qdstat::config::RunConfig;
use qdstat::pipeline::{analyze, write_outputs};
use qdstat::report::render_table;
use qdstat::simulate::simulate_stream;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let which = args.next().unwrap_or_else(|| "dr1".into());
    let outdir = args.next().map_or_else(
        || std::env::temp_dir().join(format!("qdstat-{which}")),
        PathBuf::from,
    );

    let run = RunConfig::load(&which)?;
    let sim = simulate_stream(
        &run.emitter_model()?,
        &run.detector,
        run.acquisition.duration_s,
        run.acquisition.seed,
    )?;
    let analysis = analyze(
        &sim.stream,
        run.excitation.rep_period_ps,
        &run.analysis,
        run.mean_excitations(),
    )?;
    for stage in &analysis.stages {
        println!(
            "{:<24} {}",
            stage.stage,
            if stage.ok {
                "ok"
            } else {
                stage.message.as_deref().unwrap_or("failed")
            }
        );
    }
    let files = write_outputs(&analysis, &outdir)?;
    println!("{} files in {}\n", files.len(), outdir.display());
    if let Some(report) = analysis.report {
        print!("{}", render_table(&[(which, report)]));
    }
    Ok(())
}
