fn main() {
    std::process::exit(tagrefine::cli::run(std::env::args_os()));
}
