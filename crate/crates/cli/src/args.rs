use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use grokxor::config::{load_config, RunConfig};

use crate::error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "grokxor", version, about = "Benign overfitting and grokking on noisy XOR cluster data")]
pub struct Cli {
    /// Worker threads (also `GROKXOR_THREADS`); defaults to hardware parallelism.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train one network and write its trace.
    Run(RunArgs),
    /// Evaluate good-run condition suites over many seeds.
    Check(CheckArgs),
    /// Export figure data: learning curves, decision boundaries, projection histograms.
    Figures(FiguresArgs),
    /// Run the cross-product of parameter overrides, one subdirectory per cell.
    Sweep(SweepArgs),
    /// Print the effective configuration.
    DumpConfig(ConfigArgs),
}

/// Configuration source and per-key overrides.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// `key = value` configuration file; the reference setup when absent.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n: Option<String>,
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub mu_norm: Option<String>,
    #[arg(long)]
    pub eta: Option<String>,
    #[arg(long)]
    pub m: Option<String>,
    #[arg(long, visible_alias = "omega")]
    pub omega_init: Option<String>,
    #[arg(long)]
    pub alpha: Option<String>,
    #[arg(long)]
    pub steps: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    #[arg(long)]
    pub n_test: Option<String>,
    #[arg(long)]
    pub epsilon: Option<String>,
    #[arg(long)]
    pub c_const: Option<String>,
    /// Extra `key=value` override; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl ConfigArgs {
    pub fn overrides(&self) -> CliResult<Vec<(String, String)>> {
        let named = [
            ("n", &self.n),
            ("p", &self.p),
            ("mu_norm", &self.mu_norm),
            ("eta", &self.eta),
            ("m", &self.m),
            ("omega_init", &self.omega_init),
            ("alpha", &self.alpha),
            ("steps", &self.steps),
            ("seed", &self.seed),
            ("n_test", &self.n_test),
            ("epsilon", &self.epsilon),
            ("c_const", &self.c_const),
        ];
        let mut out: Vec<(String, String)> = named
            .iter()
            .filter_map(|(k, v)| v.as_ref().map(|v| (k.to_string(), v.clone())))
            .collect();
        for kv in &self.set {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
            out.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    /// Loads the base configuration, applies overrides and validates.
    pub fn resolve(&self) -> CliResult<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
                load_config(&text)?
            }
            None => RunConfig::reference(),
        };
        for (k, v) in self.overrides()? {
            cfg.set(&k, &v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Output options shared by commands that write files.
#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output directory.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Record wall-clock timestamps in the manifest (outputs are then not byte-stable).
    #[arg(long)]
    pub record_time: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EngineArg {
    /// Weights kept in the span of the data (fast at large p).
    Span,
    /// Explicit `m × p` weight updates.
    Dense,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Steps at which to write `snap_t<t>.bin`, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub snapshots: Vec<u64>,
    #[arg(long, value_enum, default_value = "span")]
    pub engine: EngineArg,
    /// Seed index under the master seed.
    #[arg(long, default_value_t = 0)]
    pub seed_index: u64,
    /// Stop once train accuracy is 1 and test error is at most this value.
    #[arg(long)]
    pub stop_at_test_error: Option<f64>,
    /// Also render `trace.svg`.
    #[arg(long)]
    pub emit_svg: bool,
}

#[derive(Debug, Clone, Args)]
pub struct CheckArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Comma-separated suite ids, or `all`.
    #[arg(long, default_value = "all")]
    pub suites: String,
    /// Number of seeds (seed indices `0..N`).
    #[arg(long, default_value_t = 100)]
    pub seeds: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Which {
    Curves,
    Boundary,
    Histograms,
}

#[derive(Debug, Clone, Args)]
pub struct FiguresArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    #[arg(long, value_enum)]
    pub which: Which,
    #[arg(long, default_value_t = 1)]
    pub seeds: u64,
    /// Snapshot steps for boundary and histogram exports.
    #[arg(long, value_delimiter = ',', default_value = "0,1,15")]
    pub times: Vec<u64>,
    /// Grid half-width in units of the cluster means.
    #[arg(long, default_value_t = 2.0)]
    pub half_width: f64,
    #[arg(long, default_value_t = 41)]
    pub resolution: usize,
    /// Render `curves.svg` for the curves export.
    #[arg(long)]
    pub emit_svg: bool,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub output: OutputArgs,
    /// Grid axis `key=v1,v2,...`; repeatable.
    #[arg(long = "grid", value_name = "KEY=V1,V2")]
    pub grid: Vec<String>,
}
