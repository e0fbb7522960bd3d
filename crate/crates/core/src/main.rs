fn main() {
    std::process::exit(echwr::cli::run(std::env::args_os()));
}
