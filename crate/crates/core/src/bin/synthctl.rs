fn main() {
    std::process::exit(synthctl::cli::run(std::env::args_os()));
}
