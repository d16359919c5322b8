fn main() {
    std::process::exit(banditflow::cli::main_with_args(std::env::args_os()));
}
