fn main() {
    std::process::exit(protogan::cli::main_with_args(std::env::args_os()));
}
