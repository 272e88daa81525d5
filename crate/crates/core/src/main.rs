fn main() {
    std::process::exit(dpgla::cli::run(std::env::args_os()));
}
