fn main() {
    std::process::exit(lgsparse_lab::cli::run(std::env::args_os()));
}
