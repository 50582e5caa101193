fn main() {
    std::process::exit(minp::cli::run(std::env::args_os()));
}
