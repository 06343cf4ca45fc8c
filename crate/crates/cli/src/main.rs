fn main() {
    std::process::exit(emt_cli::main_with_args(std::env::args_os()));
}
