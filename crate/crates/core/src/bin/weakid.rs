fn main() {
    std::process::exit(weakid::cli::run(std::env::args_os()));
}
