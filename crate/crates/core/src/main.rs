fn main() {
    std::process::exit(mixsaw::cli::run_cli(std::env::args_os()));
}
