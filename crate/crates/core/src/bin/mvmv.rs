fn main() {
    std::process::exit(mvmv::cli::main_with_args(std::env::args_os()));
}
