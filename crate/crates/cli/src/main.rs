fn main() {
    std::process::exit(bridgecert_cli::run_cli(std::env::args_os()));
}
