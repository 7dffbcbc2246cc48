fn main() {
    std::process::exit(rqgmm::cli::run(std::env::args_os()));
}
