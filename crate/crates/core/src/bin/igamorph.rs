use clap::Parser;
use igamorph::cli::{run, Cli};

fn main() {
    env_logger::init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("igamorph: {e}");
        std::process::exit(e.exit_code());
    }
}
