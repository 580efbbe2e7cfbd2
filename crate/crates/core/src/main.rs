use std::process::ExitCode;

use clap::Parser;
use gipeps::cli::{execute, thread_limit, Cli, EXIT_ERROR};

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = thread_limit() {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_ERROR as u8);
        }
    }
    match execute(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR as u8)
        }
    }
}
