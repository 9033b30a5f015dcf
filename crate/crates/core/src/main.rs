fn main() {
    std::process::exit(caplab::cli::run(std::env::args_os()));
}
