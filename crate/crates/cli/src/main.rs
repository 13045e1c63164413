fn main() {
    std::process::exit(crowdcast_cli::run(std::env::args_os()));
}
