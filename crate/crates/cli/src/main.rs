fn main() {
    std::process::exit(emofuse_cli::run(std::env::args_os()));
}
