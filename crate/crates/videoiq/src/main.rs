fn main() {
    std::process::exit(videoiq::cli::run(std::env::args().skip(1)));
}
