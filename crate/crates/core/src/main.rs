fn main() {
    std::process::exit(leaksim::cli::run(std::env::args_os()));
}
