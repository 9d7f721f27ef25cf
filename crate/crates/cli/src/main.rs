use clap::Parser;
use rdeval_cli::{run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("RDEVAL_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Err(e) = run(&cli) {
        eprintln!("rdeval: {e}");
        std::process::exit(e.exit_code());
    }
}
