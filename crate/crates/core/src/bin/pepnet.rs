fn main() {
    std::process::exit(pepnet::cli::run(std::env::args_os()));
}
