use std::process::ExitCode;

fn main() -> ExitCode {
    masked_llp_cli::main_with_args(std::env::args_os())
}
