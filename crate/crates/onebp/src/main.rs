fn main() {
    if let Err(e) = onebp::cli::run() {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
