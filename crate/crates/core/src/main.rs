fn main() -> std::process::ExitCode {
    drvcg::cli::run()
}
