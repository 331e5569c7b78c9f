fn main() {
    std::process::exit(dyadic_osc::cli::run(std::env::args_os()));
}
