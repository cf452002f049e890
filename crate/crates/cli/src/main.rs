use std::process::ExitCode;

use clap::Parser;
use fleetgame_cli::error::ErrorReport;
use fleetgame_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let report = ErrorReport {
                error: "usage",
                exit_code: 1,
                message: e.to_string().trim_end().to_string(),
                pointer: None,
            };
            eprintln!("{}", serde_json::to_string(&report).expect("report serialises"));
            return ExitCode::from(1);
        }
    };
    match run(&cli.command) {
        Ok((manifest, summary)) => {
            println!("{summary}");
            for a in &manifest.artifacts {
                println!("wrote {}", a.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&e.report()).expect("report serialises"));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
