fn main() {
    std::process::exit(fdiag_cli::run(std::env::args_os()));
}
