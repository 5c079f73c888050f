fn main() {
    std::process::exit(shiftlab::cli::run_cli(std::env::args_os()));
}
