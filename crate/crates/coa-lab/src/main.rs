fn main() {
    std::process::exit(coa_lab::cli::run_cli(std::env::args_os()));
}
