fn main() {
    std::process::exit(osiris::cli::run());
}
