fn main() {
    std::process::exit(bespoke_forge::cli::main_with_args(std::env::args_os()));
}
