use std::io::Write;
use std::process::ExitCode;

use clap::Parser;
use rkhs_spectest_cli::{run_cli, Cli};

fn error_line(kind: &str, message: &str) -> String {
    serde_json::json!({ "error": { "kind": kind, "message": message } }).to_string()
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or_default().trim_start_matches("error: ");
            eprintln!("{}", error_line("usage", first));
            return ExitCode::from(2);
        }
    };
    match run_cli(&cli) {
        Ok(p) => {
            if let Some(config) = p.stderr {
                for line in config.lines() {
                    eprintln!("# {line}");
                }
            }
            let mut out = std::io::stdout().lock();
            let _ = out.write_all(p.stdout.as_bytes());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_line(e.kind(), &e.to_string()));
            ExitCode::FAILURE
        }
    }
}
