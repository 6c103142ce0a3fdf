fn main() {
    std::process::exit(emd_core::cli::run_cli(std::env::args_os()));
}
