fn main() {
    std::process::exit(dhcp::cli::main());
}
