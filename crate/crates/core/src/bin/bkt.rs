fn main() {
    std::process::exit(bkt_core::cli::main_with(std::env::args_os()));
}
