use clap::Parser;
use kirchhoff::cli::{run, Cli};

fn main() {
    std::process::exit(run(Cli::parse()));
}
