fn main() {
    std::process::exit(ipnseg_cli::run(std::env::args_os()));
}
