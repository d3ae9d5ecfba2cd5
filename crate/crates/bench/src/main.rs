use clap::Parser;
use logitspec_bench::cli::{execute, Cli};

fn main() {
    if let Err(f) = execute(Cli::parse()) {
        eprintln!("error: {}", f.message);
        std::process::exit(f.code);
    }
}
