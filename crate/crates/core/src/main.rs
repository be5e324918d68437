fn main() {
    std::process::exit(incstab::cli::run_from_args(std::env::args_os()));
}
