use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(artigauss::run_from(std::env::args()) as u8)
}
