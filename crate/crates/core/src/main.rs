fn main() {
    std::process::exit(actfuse::cli::run(std::env::args().collect()));
}
