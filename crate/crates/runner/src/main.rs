fn main() -> std::process::ExitCode {
    anthracnose_runner::cli::main()
}
