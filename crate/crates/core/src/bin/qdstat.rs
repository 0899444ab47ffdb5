use clap::Parser;

fn main() {
    std::process::exit(qdstat::cli::run(qdstat::cli::Cli::parse()));
}
