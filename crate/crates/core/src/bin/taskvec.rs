fn main() {
    std::process::exit(taskvec::cli::run(std::env::args_os()));
}
