fn main() {
    std::process::exit(rpcl::cli::run(std::env::args_os()));
}
