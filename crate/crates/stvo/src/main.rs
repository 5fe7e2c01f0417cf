fn main() {
    std::process::exit(stvo::cli::main_with_args(std::env::args_os()));
}
