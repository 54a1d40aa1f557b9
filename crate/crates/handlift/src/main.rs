use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(handlift::cli::run(std::env::args()) as u8)
}
