fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("LOG_LEVEL", "warn")).init();
    std::process::exit(coltype_cli::run_from(std::env::args()));
}
