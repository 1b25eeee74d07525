fn main() {
    std::process::exit(gfc_cli::run(std::env::args_os()));
}
