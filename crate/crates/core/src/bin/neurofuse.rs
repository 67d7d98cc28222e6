fn main() {
    std::process::exit(neurofuse::cli::run(std::env::args_os()));
}
