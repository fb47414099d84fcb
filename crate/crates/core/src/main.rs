use clap::Parser;
use endperiodic::cli::{run, Args};

fn main() {
    std::process::exit(run(Args::parse()));
}
