fn main() {
    std::process::exit(commnet::run(std::env::args_os()));
}
