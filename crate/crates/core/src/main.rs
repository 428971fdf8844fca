fn main() {
    std::process::exit(phi_lab::cli::main_with_args(std::env::args_os()));
}
