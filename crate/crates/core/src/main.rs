fn main() {
    std::process::exit(clsp::cli::dispatch(std::env::args_os()));
}
