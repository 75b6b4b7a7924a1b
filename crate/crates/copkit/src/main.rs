fn main() {
    std::process::exit(copkit::cli::main());
}
