fn main() {
    std::process::exit(qdsb_cli::run(std::env::args_os()));
}
