fn main() {
    std::process::exit(brainsem::cli::run(std::env::args_os()));
}
