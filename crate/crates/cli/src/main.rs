use std::fs::File;
use std::io::{self, BufWriter};
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use fpareto_cli::{exit, run, Cli, CliError, Outcome};

fn emit(cli: &Cli, outcome: &Outcome) -> Result<(), CliError> {
    let output = cli.command.output();
    let report = &outcome.report;
    match &output.out {
        Some(path) => report.write(output.format, BufWriter::new(File::create(path)?))?,
        None => report.write(output.format, io::stdout().lock())?,
    }
    if let (Some(path), Some(x)) = (&output.save_matrix, &outcome.matrix) {
        x.save_binary(path)?;
    }
    for r in &report.records {
        let snr = r.snr_db.map_or_else(|| "n/a".to_string(), |s| format!("{s:.2} dB"));
        let status = r.status.map_or_else(|| "-".to_string(), |s| format!("{s:?}"));
        eprintln!("{} seed={} snr={snr} status={status} {:.2}s", r.solver, r.seed, r.wall_seconds);
    }
    Ok(())
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => exit::SUCCESS,
                _ => exit::FAILURE,
            };
            return ExitCode::from(code as u8);
        }
    };
    let result = run(&cli, argv).and_then(|outcome| {
        emit(&cli, &outcome)?;
        Ok(outcome.exit_code())
    });
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
