fn main() {
    std::process::exit(ugac_core::cli::main_with_args(std::env::args_os()));
}
