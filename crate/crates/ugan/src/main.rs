fn main() {
    std::process::exit(ugan::cli::run());
}
