fn main() {
    std::process::exit(toposeg::cli::run(std::env::args_os()));
}
