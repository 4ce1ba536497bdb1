fn main() {
    std::process::exit(labelsr::cli::run());
}
