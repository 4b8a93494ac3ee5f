fn main() {
    std::process::exit(stiffspec::cli::main_with_args(std::env::args_os()));
}
