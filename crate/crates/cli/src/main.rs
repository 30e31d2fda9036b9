use std::process::ExitCode;

fn main() -> ExitCode {
    heatfreq_cli::run(std::env::args_os())
}
