fn main() {
    std::process::exit(guided_search::cli::run(std::env::args_os()));
}
