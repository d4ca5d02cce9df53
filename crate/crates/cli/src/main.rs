fn main() {
    std::process::exit(ssr_cli::app::run(std::env::args_os()));
}
