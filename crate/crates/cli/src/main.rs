use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RB_LOG", "warn")).init();
    let cli = rbayes_cli::Cli::parse();
    if let Err(e) = rbayes_cli::run(cli) {
        eprintln!("{}", e.to_json());
        std::process::exit(e.exit_code());
    }
}
