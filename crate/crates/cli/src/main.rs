use std::process::ExitCode;

use clap::Parser;
use xraydx_cli::Cli;

fn main() -> ExitCode {
    // clap exits 2 on usage errors and 0 for --help
    let cli = Cli::try_parse().unwrap_or_else(|e| e.exit());
    xraydx_cli::init_logging(cli.verbose);
    match xraydx_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
