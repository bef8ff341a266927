fn main() {
    std::process::exit(statebus::cli::main_with_args(std::env::args_os()));
}
