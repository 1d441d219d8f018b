use clap::Parser;
use codeswitch::cli::{exit_code, run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli, &mut std::io::stdout()) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}
