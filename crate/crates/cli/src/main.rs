fn main() {
    std::process::exit(hytccp::app::main());
}
