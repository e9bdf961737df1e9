fn main() {
    std::process::exit(vsiv::cli::run(std::env::args().collect()));
}
