fn main() {
    std::process::exit(rwmu_cli::run(std::env::args_os()));
}
