use std::net::SocketAddr;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use gramdex::{DatasetKind, LayerCombo, Split};

#[derive(Debug, Parser)]
#[command(name = "gramdex", version, about = "Gram barcode image retrieval")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    #[command(flatten)]
    pub run: RunConfig,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Barcode every image of a dataset and write a GBIX index.
    BuildIndex {
        /// Only index entries of this split (kimia24 layouts).
        #[arg(long)]
        split: Option<Split>,
    },
    /// Rank the index against one image.
    Query { image: PathBuf },
    /// Run the benchmark protocol for the dataset kind.
    Evaluate,
    /// Print the layers stored in a GBWV weight file.
    WeightsInfo,
    /// Serve the query API over HTTP.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        /// Manifest cache resolving record ids to files; defaults to the one
        /// written next to the index.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Directory mounted at `/` (the browser UI bundle).
        #[arg(long)]
        static_dir: Option<PathBuf>,
    },
}

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    /// GBWV weight file.
    #[arg(long, env = "GRAMDEX_WEIGHTS", global = true)]
    pub weights: Option<PathBuf>,

    /// Layer combination as depth digits, e.g. `2,3,5`. Repeat to evaluate several.
    #[arg(long = "layers", global = true)]
    pub layers: Vec<LayerCombo>,

    /// Dataset root directory.
    #[arg(long, global = true)]
    pub dataset: Option<PathBuf>,

    /// Dataset layout: kimia24, crc, emc or generic.
    #[arg(long, global = true)]
    pub kind: Option<DatasetKind>,

    /// GBIX index file.
    #[arg(long, global = true)]
    pub index: Option<PathBuf>,

    #[arg(long = "top-n", global = true, default_value_t = 3)]
    pub top_n: usize,

    /// Cross-validation folds (crc, emc, generic).
    #[arg(long, global = true)]
    pub folds: Option<usize>,

    /// Seed for fold shuffling.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,

    /// Worker threads; 0 uses every core.
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,

    /// Output path (report prefix for `evaluate`, JSON document for `query`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

pub const DEFAULT_FOLDS: usize = 5;

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            weights: None,
            layers: Vec::new(),
            dataset: None,
            kind: None,
            index: None,
            top_n: 3,
            folds: None,
            seed: 0,
            threads: 0,
            out: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.top_n == 0 {
            bail!("--top-n must be at least 1");
        }
        if matches!(self.folds, Some(k) if k < 2) {
            bail!("--folds must be at least 2");
        }
        Ok(())
    }

    pub fn weights(&self) -> Result<&PathBuf> {
        self.weights
            .as_ref()
            .context("no weights: pass --weights or set GRAMDEX_WEIGHTS")
    }

    pub fn dataset(&self) -> Result<(&PathBuf, DatasetKind)> {
        let root = self.dataset.as_ref().context("--dataset is required")?;
        let kind = self.kind.context("--kind is required")?;
        Ok((root, kind))
    }

    pub fn index(&self) -> Result<&PathBuf> {
        self.index.as_ref().context("--index is required")
    }

    pub fn single_combo(&self) -> Result<Option<&LayerCombo>> {
        match self.layers.as_slice() {
            [] => Ok(None),
            [c] => Ok(Some(c)),
            _ => bail!("exactly one --layers value expected"),
        }
    }

    pub fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.threads)
            .build()
            .context("building worker pool")
    }
}
