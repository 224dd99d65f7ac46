fn main() {
    std::process::exit(oneshot_birds::cli::main_with_args(std::env::args_os()));
}
