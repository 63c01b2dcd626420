use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = smpec::cli::Cli::parse();
    if let Err(e) = smpec::cli::dispatch(&cli) {
        eprintln!("smpec: {e}");
        std::process::exit(e.exit_code());
    }
}
