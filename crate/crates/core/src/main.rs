fn main() {
    std::process::exit(flowcond::cli::main_with_args(std::env::args_os()));
}
