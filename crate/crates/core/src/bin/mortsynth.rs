fn main() {
    std::process::exit(mortsynth_core::cli::cli_dispatch(std::env::args_os()));
}
