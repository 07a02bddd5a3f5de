fn main() {
    std::process::exit(sadp::cli::run(std::env::args_os()));
}
