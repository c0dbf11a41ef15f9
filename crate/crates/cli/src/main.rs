fn main() {
    std::process::exit(amdiff_cli::run(std::env::args_os()));
}
