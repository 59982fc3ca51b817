//! Effective configuration: command-line flags over a JSON config file over defaults.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
    Svg,
}

/// Every tunable, all optional so that flags and the config file can be layered.
#[derive(Clone, Debug, Default, Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Options {
    /// Matrix dimension N
    #[arg(long)]
    pub n_dim: Option<usize>,
    /// Monte Carlo replicas
    #[arg(long)]
    pub replicas: Option<u64>,
    /// Master seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Directory for result files
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Output formats, comma separated
    #[arg(long, value_enum, value_delimiter = ',')]
    pub format: Option<Vec<Format>>,
    /// Worker threads (overrides UMELAB_WORKERS)
    #[arg(long)]
    pub workers: Option<usize>,
    /// Largest time for the form factor
    #[arg(long)]
    pub t_max: Option<usize>,
    /// Brownian step size
    #[arg(long)]
    pub delta_s: Option<f64>,
    /// Sampled configurations for Brownian regressions and surveys
    #[arg(long)]
    pub configurations: Option<usize>,
    /// Walk length for enumeration checks
    #[arg(long)]
    pub length: Option<usize>,
    /// Dimension of the GUE comparison in `moments`
    #[arg(long)]
    pub gue_dim: Option<usize>,
}

impl Options {
    /// `self` wins wherever it has a value.
    pub fn over(self, lower: Options) -> Options {
        Options {
            n_dim: self.n_dim.or(lower.n_dim),
            replicas: self.replicas.or(lower.replicas),
            seed: self.seed.or(lower.seed),
            out_dir: self.out_dir.or(lower.out_dir),
            format: self.format.or(lower.format),
            workers: self.workers.or(lower.workers),
            t_max: self.t_max.or(lower.t_max),
            delta_s: self.delta_s.or(lower.delta_s),
            configurations: self.configurations.or(lower.configurations),
            length: self.length.or(lower.length),
            gue_dim: self.gue_dim.or(lower.gue_dim),
        }
    }

    pub fn load(path: &Path) -> Result<Options, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("invalid config {}: {e}", path.display()))
    }
}

/// Fully resolved configuration echoed into every result.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Effective {
    pub n_dim: usize,
    pub replicas: u64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub format: Vec<Format>,
    pub workers: Option<usize>,
    pub t_max: usize,
    pub delta_s: f64,
    pub configurations: usize,
    pub length: usize,
    pub gue_dim: usize,
}

impl Effective {
    pub fn resolve(o: Options, defaults: &Options) -> Effective {
        let o = o.over(defaults.clone());
        let n_dim = o.n_dim.unwrap_or(10);
        Effective {
            n_dim,
            replicas: o.replicas.unwrap_or(10_000),
            seed: o.seed.unwrap_or(0),
            out_dir: o.out_dir.unwrap_or_else(|| PathBuf::from("out")),
            format: o.format.unwrap_or_else(|| vec![Format::Csv, Format::Json, Format::Svg]),
            workers: o.workers,
            t_max: o.t_max.unwrap_or(3 * n_dim),
            delta_s: o.delta_s.unwrap_or(1e-3),
            configurations: o.configurations.unwrap_or(50),
            length: o.length.unwrap_or(10),
            gue_dim: o.gue_dim.unwrap_or(8),
        }
    }

    pub fn wants(&self, f: Format) -> bool {
        self.format.contains(&f)
    }
}
