fn main() {
    std::process::exit(lockin::cli::run(std::env::args_os()));
}
