use clap::error::ErrorKind;
use clap::Parser;
use lungquad_cli::Cli;

fn main() -> std::process::ExitCode {
    match Cli::try_parse() {
        Ok(cli) => std::process::ExitCode::from(lungquad_cli::run(cli).code()),
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0u8,
                _ => 1u8,
            };
            let _ = e.print();
            std::process::ExitCode::from(code)
        }
    }
}
