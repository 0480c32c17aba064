fn main() {
    std::process::exit(superq_cli::run(std::env::args_os()));
}
