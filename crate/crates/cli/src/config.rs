//! Run configuration: command-line flags over an optional TOML file over the
//! environment.

use std::path::Path;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use serde::Deserialize;

use reduct_core::oracle::{AnalyzerConfig, AnalyzerHandle};
use reduct_core::reduce::{ReductionConfig, ReductionMode};
use reduct_core::syntax::Grammar;

pub const ANALYZER_ENV: &str = "REDUCT_ANALYZER";
pub const DEFAULT_ANALYZER: &str = "builtin:all";

/// Keys accepted in the config file; every one can also be given as a flag.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub analyzer: Option<String>,
    pub grammar: Option<String>,
    pub mode: Option<String>,
    pub max_calls: Option<u64>,
    pub max_iterations: Option<u32>,
    pub timeout_secs: Option<f64>,
    pub max_restarts: Option<u32>,
    pub k: Option<Vec<usize>>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else { return Ok(Self::default()) };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }
}

/// Effective settings shared by all commands.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub analyzer: AnalyzerHandle,
    pub reduction: ReductionConfig,
    pub ks: Vec<usize>,
    pub seed: u64,
    pub workers: usize,
}

#[derive(Debug, Default, Clone, clap::Args)]
pub struct CommonArgs {
    /// Analyzer spec: builtin:<rules> or exec:<command> [args...]
    #[arg(long, global = true)]
    pub analyzer: Option<String>,
    /// TOML file with default values for these flags
    #[arg(long, global = true)]
    pub config: Option<std::path::PathBuf>,
    #[arg(long, global = true)]
    pub grammar: Option<String>,
    #[arg(long, global = true)]
    pub max_calls: Option<u64>,
    #[arg(long, global = true)]
    pub max_iterations: Option<u32>,
    /// Per-request timeout for external analyzers, in seconds
    #[arg(long, global = true)]
    pub timeout_secs: Option<f64>,
    #[arg(long, global = true)]
    pub max_restarts: Option<u32>,
    /// Worker threads for mine, flavor, eval and bench-calls
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
}

impl CommonArgs {
    pub fn resolve(&self, mode: Option<&str>, k: Option<&[usize]>) -> Result<RunConfig> {
        let file = FileConfig::load(self.config.as_deref())?;
        let spec = self
            .analyzer
            .clone()
            .or(file.analyzer)
            .or_else(|| std::env::var(ANALYZER_ENV).ok())
            .unwrap_or_else(|| DEFAULT_ANALYZER.to_owned());
        let mut analyzer: AnalyzerHandle = spec.parse().map_err(anyhow::Error::msg)?;
        let mut acfg = AnalyzerConfig::default();
        if let Some(t) = self.timeout_secs.or(file.timeout_secs) {
            if t.is_nan() || t <= 0.0 {
                bail!("timeout must be positive");
            }
            acfg.timeout = Duration::from_secs_f64(t);
        }
        if let Some(r) = self.max_restarts.or(file.max_restarts) {
            acfg.max_restarts = r;
        }
        analyzer = analyzer.with_config(acfg);

        let mut reduction = ReductionConfig::default();
        if let Some(g) = self.grammar.as_deref().or(file.grammar.as_deref()) {
            reduction.grammar = g.parse::<Grammar>().map_err(anyhow::Error::msg)?;
        }
        if let Some(m) = mode.or(file.mode.as_deref()) {
            reduction.mode = m.parse::<ReductionMode>().map_err(anyhow::Error::msg)?;
        }
        if let Some(c) = self.max_calls.or(file.max_calls) {
            if c == 0 {
                bail!("--max-calls must be at least 1");
            }
            reduction.max_analyzer_calls = c;
        }
        if let Some(i) = self.max_iterations.or(file.max_iterations) {
            if i == 0 {
                bail!("--max-iterations must be at least 1");
            }
            reduction.max_fixpoint_iterations = i;
        }

        let mut ks = k.map(<[usize]>::to_vec).or(file.k).unwrap_or_else(|| vec![1, 5]);
        if ks.is_empty() || ks.contains(&0) {
            bail!("k values must be positive");
        }
        ks.sort_unstable();
        ks.dedup();

        let workers = self
            .workers
            .or(file.workers)
            .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
            .max(1);
        Ok(RunConfig {
            analyzer,
            reduction,
            ks,
            seed: self.seed.or(file.seed).unwrap_or(0),
            workers,
        })
    }
}
