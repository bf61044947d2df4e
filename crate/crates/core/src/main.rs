fn main() {
    std::process::exit(cold::cli::main_with_args(std::env::args_os()));
}
