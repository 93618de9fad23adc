fn main() {
    std::process::exit(fantasystyle::cli::run(std::env::args_os()));
}
