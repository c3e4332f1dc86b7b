use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = evsched::cli::Cli::parse();
    if let Err(e) = evsched::cli::run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
