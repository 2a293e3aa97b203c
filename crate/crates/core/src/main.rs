fn main() -> std::process::ExitCode {
    rwe_nas::cli::main()
}
