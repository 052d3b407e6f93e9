use std::process::ExitCode;

fn main() -> ExitCode {
    voxfuse::cli::main_with_args(std::env::args_os())
}
