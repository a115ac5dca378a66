fn main() {
    std::process::exit(covsamp_core::cli::run(std::env::args_os()));
}
