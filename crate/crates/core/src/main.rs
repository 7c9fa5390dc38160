fn main() {
    std::process::exit(d2d_core::cli::run(std::env::args_os()));
}
