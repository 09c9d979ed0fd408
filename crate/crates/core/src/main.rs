fn main() -> std::process::ExitCode {
    catmap::cli::main()
}
