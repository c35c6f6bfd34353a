fn main() {
    std::process::exit(stdnet::cli::run(std::env::args_os()));
}
