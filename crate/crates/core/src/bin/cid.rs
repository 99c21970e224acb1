fn main() {
    std::process::exit(cid_core::cli::run(std::env::args_os()));
}
