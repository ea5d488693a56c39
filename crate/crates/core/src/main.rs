fn main() {
    std::process::exit(colopath::cli::cli(std::env::args_os()));
}
