fn main() {
    std::process::exit(costnpv::cli::main_with_args(std::env::args_os()));
}
