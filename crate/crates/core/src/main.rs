fn main() {
    std::process::exit(senseprop::cli::main());
}
