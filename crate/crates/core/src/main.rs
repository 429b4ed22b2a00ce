fn main() {
    std::process::exit(splatbalance::cli::main());
}
