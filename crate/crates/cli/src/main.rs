fn main() -> std::process::ExitCode {
    std::process::ExitCode::from(bubblescope_cli::run(std::env::args_os()))
}
