mod args;
mod commands;

use clap::Parser;

use args::{expand_config, Cli, Command};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let argv = match expand_config(std::env::args().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    };
    let cli = Cli::parse_from(argv);
    let result = match cli.command {
        Command::Build(a) => commands::build(&a),
        Command::Cycles(a) => commands::cycles(&a),
        Command::Stream(a) => commands::stream(&a),
        Command::Merge(a) => commands::merge(&a),
        Command::Search(a) => commands::search(&a),
        Command::Report(a) => commands::report(&a),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
