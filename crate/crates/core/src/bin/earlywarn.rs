fn main() {
    std::process::exit(earlywarn::cli::run(std::env::args_os()));
}
