//! Command-line front end and HTTP service for gramdex.

pub mod commands;
pub mod config;
pub mod engine;
pub mod service;

use anyhow::Result;

use crate::commands::manifest_path_for;
use crate::config::{Cli, Command};

pub fn run(cli: Cli) -> Result<()> {
    let config = cli.run;
    config.validate()?;
    match cli.command {
        Command::BuildIndex { split } => {
            let s = commands::cmd_build_index(&config, split)?;
            println!(
                "wrote {} ({} images, {} bits, {:.1}s)",
                s.index_path.display(),
                s.images,
                s.bit_len,
                s.elapsed.as_secs_f64()
            );
        }
        Command::Query { image } => {
            let doc = commands::cmd_query(&config, &image)?;
            print!("{}", doc.listing());
        }
        Command::Evaluate => {
            for report in commands::cmd_evaluate(&config)? {
                println!("{}", report.table());
            }
        }
        Command::WeightsInfo => print!("{}", commands::cmd_weights_info(&config)?),
        Command::Serve {
            bind,
            manifest,
            static_dir,
        } => {
            if config.top_n > service::MAX_N {
                anyhow::bail!("--top-n must be at most {}", service::MAX_N);
            }
            let index_path = config.index()?.clone();
            let model = commands::load_model(&config)?;
            let opts = service::ServeOptions {
                bind,
                manifest_path: manifest.unwrap_or_else(|| manifest_path_for(&index_path)),
                index_path,
                static_dir,
                default_n: config.top_n,
            };
            tokio::runtime::Runtime::new()?.block_on(service::serve(model, opts))?;
        }
    }
    Ok(())
}
