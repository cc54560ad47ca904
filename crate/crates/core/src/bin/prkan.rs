fn main() {
    std::process::exit(prkan::cli::main());
}
