use std::process::ExitCode;

fn main() -> ExitCode {
    coadopt::cli::run_from(std::env::args_os())
}
