use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(start::cli::run(std::env::args_os()))
}
