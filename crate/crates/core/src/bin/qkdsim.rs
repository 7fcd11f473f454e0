fn main() {
    std::process::exit(sps_qkd::cli::dispatch(std::env::args_os()));
}
