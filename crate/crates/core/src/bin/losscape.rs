fn main() {
    std::process::exit(losscape::cli::run(std::env::args_os()));
}
