fn main() {
    std::process::exit(tabdiff::cli::run(std::env::args_os()));
}
