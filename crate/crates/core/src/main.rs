fn main() {
    std::process::exit(tensorball::cli::run(std::env::args_os()));
}
