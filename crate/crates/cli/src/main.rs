fn main() {
    std::process::exit(lvtts_cli::run(std::env::args().collect()));
}
