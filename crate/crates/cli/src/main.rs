fn main() {
    std::process::exit(upconv_cli::cli_dispatch(std::env::args_os()));
}
