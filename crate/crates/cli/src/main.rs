fn main() {
    std::process::exit(radio_twin_cli::run(std::env::args_os()));
}
