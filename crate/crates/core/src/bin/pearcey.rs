fn main() {
    std::process::exit(pearcey::cli::run(std::env::args_os()));
}
