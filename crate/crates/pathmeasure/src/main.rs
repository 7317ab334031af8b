fn main() {
    std::process::exit(pathmeasure::cli::run());
}
