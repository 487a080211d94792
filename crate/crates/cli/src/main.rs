fn main() {
    std::process::exit(phiclosure_cli::main_with(std::env::args_os()));
}
