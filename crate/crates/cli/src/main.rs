fn main() {
    std::process::exit(carmen_cli::main_with(std::env::args_os()));
}
