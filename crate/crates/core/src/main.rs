use std::process::ExitCode;

fn main() -> ExitCode {
    transport_fusion::cli::main_with_args(std::env::args_os())
}
