fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("PIEFORGE_LOG", "warn")).init();
    std::process::exit(pieforge::cli::run(std::env::args_os()));
}
