//! Optional JSON config file. Keys mirror the long flag names with
//! underscores; a flag given on the command line wins over the file.

use std::path::{Path, PathBuf};

use dsd_core::simkit::{PairKind, SyntheticPairSpec};
use dsd_core::transport::ChannelConfig;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, CliResult};

pub const OUT_DIR_ENV: &str = "DSD_OUT_DIR";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub alpha: Option<f64>,
    pub b: Option<f64>,
    pub c: Option<f64>,
    pub alphas: Option<Vec<f64>>,
    pub latencies: Option<Vec<f64>>,
    pub gamma_max: Option<u32>,
    pub vocab: Option<usize>,
    pub kind: Option<PairKind>,
    pub lambda: Option<f64>,
    pub temp: Option<f64>,
    pub pair_seed: Option<u64>,
    pub gamma: Option<usize>,
    pub gammas: Option<Vec<usize>>,
    pub k: Option<usize>,
    pub ks: Option<Vec<usize>>,
    pub rounds: Option<usize>,
    pub samples: Option<usize>,
    pub b_full: Option<f64>,
    pub prob_bits: Option<u32>,
    pub t_llm: Option<f64>,
    pub include_index_bits: Option<bool>,
    pub include_downlink: Option<bool>,
    pub out_dir: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
    }
}

/// Flag, then file, then default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

pub fn require<T>(flag: Option<T>, file: Option<T>, name: &str) -> CliResult<T> {
    flag.or(file)
        .ok_or_else(|| CliError::Validation(format!("--{name} is required")))
}

pub fn out_dir(flag: Option<PathBuf>, file: Option<PathBuf>) -> PathBuf {
    flag.or(file)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."))
}

#[derive(Debug, Clone, clap::Args)]
pub struct PairArgs {
    /// Vocabulary size of the synthetic pair.
    #[arg(long)]
    pub vocab: Option<usize>,
    #[arg(long, value_enum)]
    pub kind: Option<KindArg>,
    /// Logit-space overlap between drafter and target, in [0, 1].
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Target sampling temperature; 0 means greedy.
    #[arg(long)]
    pub temp: Option<f64>,
    /// Seed for the synthetic logits (defaults to --seed).
    #[arg(long)]
    pub pair_seed: Option<u64>,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum KindArg {
    Static,
    Markov,
}

impl From<KindArg> for PairKind {
    fn from(k: KindArg) -> Self {
        match k {
            KindArg::Static => PairKind::Static,
            KindArg::Markov => PairKind::Markov,
        }
    }
}

impl PairArgs {
    pub fn resolve(&self, file: &FileConfig, seed: u64) -> CliResult<SyntheticPairSpec> {
        let spec = SyntheticPairSpec {
            vocab_size: pick(self.vocab, file.vocab, 64),
            kind: pick(self.kind.map(Into::into), file.kind, PairKind::Static),
            overlap_lambda: pick(self.lambda, file.lambda, 0.5),
            target_temp: pick(self.temp, file.temp, 1.0),
            seed: pick(self.pair_seed, file.pair_seed, seed),
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, clap::Args)]
pub struct ChannelArgs {
    /// Uplink cost of a full-vocabulary distribution, relative to one target step.
    #[arg(long)]
    pub b_full: Option<f64>,
    /// Drafter step cost relative to one target step.
    #[arg(long)]
    pub c: Option<f64>,
    #[arg(long)]
    pub prob_bits: Option<u32>,
    /// Seconds per target step.
    #[arg(long)]
    pub t_llm: Option<f64>,
    #[arg(long)]
    pub include_index_bits: bool,
    #[arg(long)]
    pub include_downlink: bool,
}

impl ChannelArgs {
    pub fn resolve(&self, file: &FileConfig, vocab: usize) -> CliResult<ChannelConfig> {
        let mut cfg = ChannelConfig::from_ratios(
            vocab,
            pick(self.prob_bits, file.prob_bits, 16),
            pick(self.b_full, file.b_full, 0.23),
            pick(self.c, file.c, 0.07),
            pick(self.t_llm, file.t_llm, 0.05),
        )?;
        cfg.include_index_bits = self.include_index_bits || file.include_index_bits.unwrap_or(false);
        cfg.include_downlink = self.include_downlink || file.include_downlink.unwrap_or(false);
        Ok(cfg)
    }
}

/// Effective settings echoed next to every output.
#[derive(Debug, Serialize)]
pub struct Meta<'a, C: Serialize> {
    pub schema_version: u32,
    pub command: &'a str,
    pub seed: u64,
    pub config: C,
}
