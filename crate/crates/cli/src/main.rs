fn main() {
    std::process::exit(contactpsi_cli::cli::main_with_args(std::env::args_os()));
}
