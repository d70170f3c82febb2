fn main() {
    std::process::exit(yardcast_cli::run(std::env::args_os()));
}
