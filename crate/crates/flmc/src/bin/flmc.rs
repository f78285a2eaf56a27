fn main() {
    std::process::exit(flmc::cli::dispatch(std::env::args_os()));
}
