fn main() {
    std::process::exit(cfisac::cli::cli_main(std::env::args_os()));
}
