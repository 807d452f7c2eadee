fn main() {
    std::process::exit(streetnav::cli::run());
}
