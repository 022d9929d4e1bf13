fn main() {
    std::process::exit(polymerlab::cli::run(std::env::args_os()));
}
