use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stratalloc::{MomentPolicy, Sense, VarCoefficient};

#[derive(Debug, Parser)]
#[command(name = "stratalloc", version, about = "Optimum allocation for multivariate stratified sampling")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the variance estimators at a given allocation.
    Estimate(EstimateArgs),
    /// Solve the configured allocation models.
    Allocate(AllocateArgs),
    /// Run the Monte Carlo lab on a finite population.
    Simulate(SimulateArgs),
    /// Render the comparison table from a structured `allocate` result.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Structured,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PolicyArg {
    Supplied,
    Proxy,
    Raw,
}

impl From<PolicyArg> for MomentPolicy {
    fn from(p: PolicyArg) -> Self {
        match p {
            PolicyArg::Supplied => MomentPolicy::Supplied,
            PolicyArg::Proxy => MomentPolicy::Proxy,
            PolicyArg::Raw => MomentPolicy::Raw,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CoefficientArg {
    AsPaper,
    Squared,
}

impl From<CoefficientArg> for VarCoefficient {
    fn from(c: CoefficientArg) -> Self {
        match c {
            CoefficientArg::AsPaper => VarCoefficient::AsPaper,
            CoefficientArg::Squared => VarCoefficient::Squared,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum SenseArg {
    Min,
    Max,
}

impl From<SenseArg> for Sense {
    fn from(s: SenseArg) -> Self {
        match s {
            SenseArg::Min => Sense::Min,
            SenseArg::Max => Sense::Max,
        }
    }
}

/// Design inputs shared by `estimate` and `allocate`.
#[derive(Debug, Args)]
pub struct DesignArgs {
    /// Run configuration (TOML).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Stratum summary CSV; overrides the configured design.
    #[arg(long)]
    pub design: Option<PathBuf>,
    /// Unit-level CSV (`stratum,y_1..y_G`) used by the `raw` moment policy.
    #[arg(long)]
    pub units: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub moment_policy: Option<PolicyArg>,
    #[arg(long, value_enum)]
    pub var_coefficient: Option<CoefficientArg>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Comma-separated sample sizes, one per stratum.
    #[arg(long, value_delimiter = ',', required = true)]
    pub allocation: Vec<usize>,
}

#[derive(Debug, Args)]
pub struct AllocateArgs {
    #[command(flatten)]
    pub design: DesignArgs,
    /// Solve only the named model. Without a config file this picks a
    /// preset: `weighting-e`, `weighting-v` or `single-characteristic`.
    #[arg(long)]
    pub model: Option<String>,
    /// Characteristic (0-based) for the `single-characteristic` preset.
    #[arg(long, default_value_t = 0)]
    pub characteristic: usize,
    /// Seed for the solver's random starting points.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Optimization sense applied to every probability model.
    #[arg(long, value_enum)]
    pub sense: Option<SenseArg>,
    /// Fixed total sample size.
    #[arg(long, conflicts_with = "budget")]
    pub total: Option<usize>,
    /// Cost budget.
    #[arg(long)]
    pub budget: Option<f64>,
    /// Fixed overhead cost.
    #[arg(long)]
    pub overhead: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Simulation configuration (TOML) with a population description.
    #[arg(long, required_unless_present = "units")]
    pub config: Option<PathBuf>,
    /// Unit-level CSV (`stratum,y_1..y_G`) used as the population.
    #[arg(long, conflicts_with = "config")]
    pub units: Option<PathBuf>,
    /// Sample size drawn from every stratum.
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Structured output of `allocate`.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
}
