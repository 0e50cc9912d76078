fn main() {
    std::process::exit(egmr::harness::cli::run(std::env::args_os()));
}
