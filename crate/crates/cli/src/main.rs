fn main() {
    std::process::exit(adl_cli::run_command(std::env::args_os()));
}
