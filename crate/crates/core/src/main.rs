fn main() {
    std::process::exit(crossfeat::cli::main_with_args(std::env::args_os()));
}
