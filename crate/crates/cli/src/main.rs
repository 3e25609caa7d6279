fn main() {
    std::process::exit(fairpol::main_with_args(std::env::args_os()));
}
