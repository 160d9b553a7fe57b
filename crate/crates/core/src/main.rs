use clap::Parser;

use promix::cli::{error_json, execute, exit_code, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = execute(Cli::parse()) {
        eprintln!("{}", error_json(&e));
        std::process::exit(exit_code(&e));
    }
}
