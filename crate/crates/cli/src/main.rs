fn main() {
    std::process::exit(conset_cli::run());
}
