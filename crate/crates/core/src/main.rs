fn main() {
    std::process::exit(spatial_ar::cli::main_with_args(std::env::args_os()));
}
