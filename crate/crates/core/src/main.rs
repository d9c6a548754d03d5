fn main() {
    std::process::exit(robust_sosp::harness::cli(std::env::args_os()));
}
