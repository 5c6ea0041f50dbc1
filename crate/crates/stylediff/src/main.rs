fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(stylediff::cli::cli_main(&args));
}
