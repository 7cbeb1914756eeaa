use std::process::ExitCode;

fn main() -> ExitCode {
    attnsphere::cli::main_with_args(std::env::args_os())
}
