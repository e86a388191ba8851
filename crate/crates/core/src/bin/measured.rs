fn main() {
    std::process::exit(measured::cli::main_with(std::env::args_os()));
}
