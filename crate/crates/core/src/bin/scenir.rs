fn main() {
    std::process::exit(scenir::pipeline::run(std::env::args_os()));
}
