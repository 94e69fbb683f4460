fn main() -> std::process::ExitCode {
    somnoflow::cli::main_entry()
}
