fn main() {
    std::process::exit(mfbm_cli::run_command(std::env::args_os()));
}
