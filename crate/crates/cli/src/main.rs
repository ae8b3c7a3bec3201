fn main() -> std::process::ExitCode {
    memometer_cli::main_entry()
}
