//! Command implementations behind the `qdstat` binary.
//!
//! Exit status: 0 on success, 1 for configuration errors and failed analysis
//! stages, 2 for I/O and tag-format errors.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::RunConfig;
use crate::pipeline::{analyze, write_outputs};
use crate::report::{render_table, YieldReport};
use crate::simulate::simulate_stream;
use crate::timetags::{read_tags_file, write_tags_file};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const THREADS_ENV: &str = "QDSTAT_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "qdstat",
    version,
    about = "Flickering single-photon emitter simulation and photon statistics"
)]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = THREADS_ENV)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Simulate an acquisition and write its time tags.
    Simulate {
        /// TOML configuration file or preset name (dr1, dr2).
        #[arg(long)]
        config: String,
        /// Output tag file; a `.csv` extension selects the text format.
        #[arg(long)]
        out: PathBuf,
    },
    /// Analyze a tag file and write every product into a directory.
    Analyze {
        #[arg(long)]
        tags: PathBuf,
        #[arg(long)]
        config: String,
        #[arg(long)]
        outdir: PathBuf,
    },
    /// Print a yield table from one or more analysis directories.
    Report {
        #[arg(long = "dir", required = true)]
        dirs: Vec<PathBuf>,
    },
}

pub fn run(cli: Cli) -> i32 {
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot size thread pool: {e}");
            return EXIT_CONFIG;
        }
    }
    match cli.command {
        Command::Simulate { config, out } => cmd_simulate(&config, &out),
        Command::Analyze {
            tags,
            config,
            outdir,
        } => cmd_analyze(&tags, &config, &outdir),
        Command::Report { dirs } => cmd_report(&dirs),
    }
}

pub fn cmd_simulate(config: &str, out: &Path) -> i32 {
    let cfg = match RunConfig::load(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let model = match cfg.emitter_model() {
        Ok(m) => m,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let sim = match simulate_stream(
        &model,
        &cfg.detector,
        cfg.acquisition.duration_s,
        cfg.acquisition.seed,
    ) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Err(e) = write_tags_file(out, &sim.stream) {
        eprintln!("error: writing {}: {e}", out.display());
        return EXIT_IO;
    }
    println!(
        "wrote {} tags to {} ({:.1} s, mean rate {:.0} counts/s, bright fraction {:.3})",
        sim.stream.len(),
        out.display(),
        sim.stream.meta().duration_ps as f64 * 1e-12,
        sim.stream.mean_rate_hz(),
        sim.trajectory.bright_fraction()
    );
    EXIT_OK
}

pub fn cmd_analyze(tags: &Path, config: &str, outdir: &Path) -> i32 {
    let cfg = match RunConfig::load(config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    let stream = match read_tags_file(tags) {
        Ok(s) => s,
        Err(e) => {
            eprintln!("error: {}: {e}", tags.display());
            return EXIT_IO;
        }
    };
    let rep = match stream.meta().rep_period_ps {
        0 => cfg.excitation.rep_period_ps,
        p => p,
    };
    let analysis = match analyze(&stream, rep, &cfg.analysis, cfg.mean_excitations()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return EXIT_CONFIG;
        }
    };
    if let Err(e) = write_outputs(&analysis, outdir) {
        eprintln!("error: writing {}: {e}", outdir.display());
        return EXIT_IO;
    }
    println!("analyzed {} tags into {}", stream.len(), outdir.display());
    if let Some(f) = analysis.fractions() {
        println!(
            "photon fractions: bright {:.3}, grey {:.3}, discarded {:.3}",
            f.bright, f.grey, f.discarded
        );
    }
    if let Some(r) = &analysis.report {
        print!("{}", render_table(&[(emitter_name(outdir), r.clone())]));
    }
    let failed: Vec<_> = analysis.failed_stages().collect();
    for s in &failed {
        eprintln!(
            "stage {} failed: {}",
            s.stage,
            s.message.as_deref().unwrap_or("")
        );
    }
    if failed.is_empty() {
        EXIT_OK
    } else {
        EXIT_CONFIG
    }
}

pub fn cmd_report(dirs: &[PathBuf]) -> i32 {
    if dirs.is_empty() {
        eprintln!("error: no analysis directory given");
        return EXIT_CONFIG;
    }
    let mut rows = Vec::new();
    for dir in dirs {
        let path = dir.join("report.json");
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return EXIT_CONFIG;
            }
        };
        match YieldReport::from_json(&text) {
            Ok(r) => rows.push((emitter_name(dir), r)),
            Err(e) => {
                eprintln!("error: {}: {e}", path.display());
                return EXIT_CONFIG;
            }
        }
    }
    print!("{}", render_table(&rows));
    EXIT_OK
}

fn emitter_name(dir: &Path) -> String {
    dir.file_name().map_or_else(
        || dir.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}
