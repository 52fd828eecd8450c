fn main() {
    std::process::exit(rvinr::cli::run(std::env::args_os()));
}
