fn main() {
    std::process::exit(conformal_retrieval_cli::run(std::env::args_os()));
}
