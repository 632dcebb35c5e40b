use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = lauerl_cli::Cli::parse();
    if let Err(e) = lauerl_cli::run(cli) {
        eprintln!("{e}");
        std::process::exit(e.exit_code());
    }
}
