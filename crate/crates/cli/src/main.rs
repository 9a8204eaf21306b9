use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use csc_ipca::cli::{run, Cli};
use csc_ipca::CliError;

fn fail(err: &CliError, code: u8) -> ExitCode {
    eprintln!("{}", err.to_json());
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail(&CliError::Usage(e.render().to_string().trim_end().to_string()), 2),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e, 1),
    }
}
