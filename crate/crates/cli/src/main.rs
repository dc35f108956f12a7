fn main() {
    std::process::exit(latprof_cli::run(std::env::args().collect()));
}
