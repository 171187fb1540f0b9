use env_logger::Env;

fn main() {
    env_logger::Builder::from_env(Env::new().filter_or("EIR_EQ_LOG", "error")).init();
    std::process::exit(eir_eq::cli::run(std::env::args_os()));
}
