fn main() {
    std::process::exit(proxqn_cli::run(std::env::args_os()));
}
