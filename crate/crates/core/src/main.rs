fn main() {
    std::process::exit(spinstar::cli::main());
}
