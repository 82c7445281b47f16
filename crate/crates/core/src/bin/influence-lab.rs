fn main() {
    std::process::exit(influence_lab::cli::main_with_args(std::env::args_os()));
}
