fn main() {
    std::process::exit(convint::cli::main_with_args(std::env::args_os()));
}
