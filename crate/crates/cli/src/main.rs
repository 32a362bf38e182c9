use clap::Parser;
use gramdex_cli::config::Cli;

fn main() -> anyhow::Result<()> {
    gramdex_cli::run(Cli::parse())
}
