use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use qcrb::cli::{run, Cli, Command, SCHEMA};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if matches!(cli.command, Command::Schema) {
        print!("{SCHEMA}");
        return ExitCode::SUCCESS;
    }
    let out = run(cli);
    let report = &out.report;
    if let Some(err) = &report.error {
        eprintln!("qcrb {}: {}: {}", report.command, err.kind, err.message);
        if let Some(d) = &err.direction {
            eprintln!("unidentifiable direction: {d:?}");
        }
    }
    let json = report.to_json();
    match &out.report_path {
        Some(path) => {
            if let Err(e) = std::fs::write(path, json + "\n") {
                eprintln!("qcrb: cannot write {}: {e}", path.display());
                return ExitCode::from(1);
            }
        }
        None => println!("{json}"),
    }
    ExitCode::from(report.exit_code as u8)
}
