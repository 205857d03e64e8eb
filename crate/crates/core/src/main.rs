fn main() -> std::process::ExitCode {
    slidegen_core::cli::main()
}
