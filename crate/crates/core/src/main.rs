fn main() {
    std::process::exit(ioncavity::cli::run(std::env::args_os()));
}
