fn main() {
    std::process::exit(r3dm::cli::main());
}
