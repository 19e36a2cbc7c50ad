fn main() {
    std::process::exit(graphlog::cli::run(std::env::args_os()));
}
