fn main() {
    std::process::exit(luvli::cli::run(std::env::args_os()));
}
