fn main() {
    std::process::exit(delight::cli::main_with(std::env::args_os()));
}
