fn main() {
    std::process::exit(int4q_cli::run(std::env::args_os()));
}
