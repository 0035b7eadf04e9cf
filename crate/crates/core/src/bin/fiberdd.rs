use clap::Parser;
use fiberdd::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
