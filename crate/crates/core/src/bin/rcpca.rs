fn main() {
    std::process::exit(rcpca::cli::main_with_args(std::env::args_os()));
}
