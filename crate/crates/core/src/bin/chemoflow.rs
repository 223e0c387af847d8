fn main() {
    std::process::exit(chemoflow_core::io::cli::main_with_args(std::env::args_os()));
}
