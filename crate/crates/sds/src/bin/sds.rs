use std::process::ExitCode;

fn main() -> ExitCode {
    sds_tools::cli::main_with(std::env::args_os())
}
