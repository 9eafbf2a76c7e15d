use std::path::PathBuf;

use clap::Parser;

/// Command-line flags; each can also be set through a `LOSSLENS_*`
/// environment variable.
#[derive(Debug, Clone, Parser)]
#[command(
    name = "losslens",
    version,
    about = "Loss-landscape exploration server"
)]
pub struct Config {
    #[arg(long, env = "LOSSLENS_HOST", default_value = "127.0.0.1")]
    pub host: String,

    #[arg(long, env = "LOSSLENS_PORT", default_value_t = 8080)]
    pub port: u16,

    /// Jobs allowed to run at the same time; the rest queue.
    #[arg(long, env = "LOSSLENS_MAX_JOBS", default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..))]
    pub max_jobs: u32,

    /// Default seed for data generation, initialization and sampling.
    #[arg(long, env = "LOSSLENS_SEED", default_value_t = 0)]
    pub seed: u64,

    /// Directory for exported and imported target-point files.
    #[arg(long, env = "LOSSLENS_DATA_DIR", default_value = "data")]
    pub data_dir: PathBuf,
}

impl Default for Config {
    fn default() -> Self {
        Self {
            host: "127.0.0.1".into(),
            port: 8080,
            max_jobs: 2,
            seed: 0,
            data_dir: PathBuf::from("data"),
        }
    }
}
