fn main() {
    std::process::exit(plane_sweep::cli::run(std::env::args_os()));
}
