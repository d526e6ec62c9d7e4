use std::process::ExitCode;

fn main() -> ExitCode {
    ExitCode::from(deepfpc::cli::dispatch(std::env::args()) as u8)
}
