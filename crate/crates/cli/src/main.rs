fn main() {
    std::process::exit(regunet_cli::run(std::env::args_os()));
}
