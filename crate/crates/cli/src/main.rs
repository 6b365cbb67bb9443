fn main() {
    std::process::exit(dtp_cli::run(std::env::args_os()));
}
