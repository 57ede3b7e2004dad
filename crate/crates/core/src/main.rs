fn main() {
    admm_nnmpc::cli::init_logging();
    std::process::exit(admm_nnmpc::cli::main_with_args(std::env::args_os()));
}
