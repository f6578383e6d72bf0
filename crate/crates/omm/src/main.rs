fn main() {
    std::process::exit(omm::main_with_args(std::env::args_os()));
}
