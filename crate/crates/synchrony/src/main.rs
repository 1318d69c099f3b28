fn main() -> std::process::ExitCode {
    synchrony::cli::run(std::env::args_os())
}
