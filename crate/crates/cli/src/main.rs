fn main() {
    std::process::exit(ensemble_place_cli::run(std::env::args_os()));
}
