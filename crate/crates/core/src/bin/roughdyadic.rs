fn main() {
    std::process::exit(roughdyadic::cli::main_with_args(std::env::args_os()));
}
