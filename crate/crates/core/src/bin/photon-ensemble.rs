fn main() {
    std::process::exit(photon_ensemble::cli::run(std::env::args_os()));
}
