fn main() {
    std::process::exit(drgaze_cli::run_from(std::env::args_os()));
}
