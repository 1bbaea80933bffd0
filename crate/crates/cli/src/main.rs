fn main() {
    std::process::exit(stenunet_cli::run(std::env::args_os()));
}
