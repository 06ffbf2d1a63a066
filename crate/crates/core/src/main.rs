fn main() {
    std::process::exit(chanauth::cli::run(std::env::args_os()));
}
