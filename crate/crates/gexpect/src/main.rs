use std::process::ExitCode;

fn main() -> ExitCode {
    gexpect::cli::run()
}
