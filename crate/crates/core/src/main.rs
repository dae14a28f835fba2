fn main() {
    std::process::exit(pathrec::cli::run());
}
