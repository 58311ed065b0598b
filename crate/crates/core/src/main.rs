fn main() {
    std::process::exit(exertion::cli::run(std::env::args_os()));
}
