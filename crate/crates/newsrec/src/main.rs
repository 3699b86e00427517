fn main() {
    std::process::exit(newsrec::cli::run());
}
