use clap::Parser;
use mtl_wavenet::cli::{self, Cli};

fn main() {
    let args = Cli::parse();
    if let Err(e) = cli::run(&args.command) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
