fn main() {
    std::process::exit(refinegan_cli::run(std::env::args_os()));
}
