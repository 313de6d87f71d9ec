fn main() {
    std::process::exit(flowmot::cli::main());
}
