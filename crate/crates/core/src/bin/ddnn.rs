fn main() {
    std::process::exit(ddnn::cli::run_cli(std::env::args_os()));
}
