fn main() {
    std::process::exit(sphconv::cli::run(std::env::args_os()));
}
