use std::process::ExitCode;

use hskan::cli::{run, RunError};

fn main() -> ExitCode {
    let mut stdout = std::io::stdout().lock();
    match run(std::env::args_os(), &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Usage(e)) => e.exit(),
        Err(RunError::Failed(e)) => {
            eprintln!("hskan: {e}");
            ExitCode::from(1)
        }
    }
}
