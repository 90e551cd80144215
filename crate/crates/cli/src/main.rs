use clap::Parser;

use strandchain_cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    let status = match run(cli) {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {e}");
            e.status
        }
    };
    std::process::exit(status.code());
}
