fn main() {
    std::process::exit(dcm::harness::cli::main_with_args(std::env::args_os()));
}
