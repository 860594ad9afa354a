fn main() {
    std::process::exit(pointlift_cli::run(std::env::args_os()));
}
