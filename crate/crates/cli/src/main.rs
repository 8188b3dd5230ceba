fn main() {
    std::process::exit(cellnet_cli::run(std::env::args_os()));
}
