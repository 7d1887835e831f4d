fn main() {
    std::process::exit(traverse_da_cli::dispatch(std::env::args_os()));
}
