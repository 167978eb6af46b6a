fn main() {
    std::process::exit(extcal::cli::run(std::env::args_os()));
}
