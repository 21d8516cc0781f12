use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = indusite_cli::Cli::parse();
    match indusite_cli::run(cli) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            if outcome.failures > 0 {
                log::error!("{} of {} items failed", outcome.failures, outcome.items);
            }
            ExitCode::from(outcome.exit_code() as u8)
        }
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::from(2)
        }
    }
}
