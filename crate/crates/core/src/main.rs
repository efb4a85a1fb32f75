fn main() {
    std::process::exit(discoq::cli::cli(std::env::args()));
}
