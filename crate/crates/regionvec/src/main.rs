fn main() {
    std::process::exit(regionvec::cli::run(std::env::args_os()));
}
