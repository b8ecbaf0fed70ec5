fn main() {
    std::process::exit(gmcycle::cli::run(std::env::args_os()));
}
