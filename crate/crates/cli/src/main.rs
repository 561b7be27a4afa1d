fn main() {
    std::process::exit(tagpaint_cli::run(std::env::args_os()));
}
