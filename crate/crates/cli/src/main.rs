fn main() {
    std::process::exit(molshift_cli::run_main(std::env::args_os()));
}
