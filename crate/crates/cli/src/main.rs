use std::process::ExitCode;

fn main() -> ExitCode {
    synthima_cli::run(std::env::args_os())
}
