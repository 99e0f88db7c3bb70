fn main() {
    std::process::exit(ltmx::cli::main_from_args(std::env::args_os()));
}
