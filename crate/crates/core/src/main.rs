fn main() {
    std::process::exit(wishart_ldp::cli::run(std::env::args_os()));
}
