fn main() {
    std::process::exit(fedsurg::cli::run(std::env::args_os()));
}
