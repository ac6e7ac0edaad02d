fn main() {
    std::process::exit(ffbench_cli::main_with(std::env::args_os()));
}
