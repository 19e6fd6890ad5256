fn main() {
    std::process::exit(switchsde_cli::run_cli(std::env::args_os()));
}
