fn main() {
    std::process::exit(discdream_cli::run(std::env::args_os()));
}
