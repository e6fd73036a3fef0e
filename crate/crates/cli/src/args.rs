//! Subcommand grammar. Every payload is serializable so that a manifest can
//! store and replay it.

use std::path::PathBuf;

use clap::{Args, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

#[derive(Subcommand, Serialize, Deserialize, Clone, Debug, PartialEq)]
#[serde(tag = "command", rename_all = "snake_case")]
pub enum Command {
    /// Noise trajectories or ensembles.
    Generate(GenerateArgs),
    /// Analytic or empirical two-time correlations.
    Correlate(CorrelateArgs),
    /// Closed-form chi(t), S(t) and short/long-time expansions.
    Analytic(AnalyticArgs),
    /// Monte Carlo Ramsey signal with error bars.
    Simulate(SimulateArgs),
    /// chi(t) by direct quadrature of the correlation function.
    Oracle(OracleArgs),
    /// Least-squares fit of one or more Ramsey curves.
    Fit(FitArgs),
    /// Regime label from one or two Ramsey curves.
    Classify(ClassifyArgs),
    /// Empirical versus analytic correlation of a seeded ensemble.
    Validate(ValidateArgs),
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum KindArg {
    Markovian,
    SecondOrder,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum IcArg {
    Equilibrium,
    Quenched,
    DelayedQuench,
    SwitchedTc,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SourceArg {
    Langevin,
    RotatingBath,
    AsymmetricBath,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum IntegratorArg {
    Exact,
    EulerMaruyama,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum FormatArg {
    Csv,
    Binary,
}

#[derive(ValueEnum, Serialize, Deserialize, Clone, Copy, Debug, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum HintArg {
    AsPrepared,
    Quenched,
}

/// Noise model. `--delta` and `--drive` are in volts (V, V²/µs³) and are
/// multiplied by `--coupling` (rad/µs per V) into canonical units.
#[derive(Args, Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct NoiseArgs {
    #[arg(long, value_enum, default_value = "markovian")]
    pub kind: KindArg,
    /// Noise standard deviation, V.
    #[arg(long, conflicts_with = "drive")]
    pub delta: Option<f64>,
    /// Normalized driving strength A/m², V²/µs³.
    #[arg(long)]
    pub drive: Option<f64>,
    /// Correlation time, µs.
    #[arg(long, conflicts_with = "beta")]
    pub tc: Option<f64>,
    /// Damping coefficient 2/t_c, 1/µs.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Natural frequency, rad/µs (second-order only).
    #[arg(long)]
    pub omega0: Option<f64>,
    /// rad/µs per V.
    #[arg(long, default_value_t = 8.0)]
    pub coupling: f64,
}

/// Preparation of the noise. Times in µs.
#[derive(Args, Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct IcArgs {
    #[arg(long, value_enum, default_value = "equilibrium")]
    pub ic: IcArg,
    #[arg(long)]
    pub td: Option<f64>,
    #[arg(long)]
    pub ta: Option<f64>,
    #[arg(long)]
    pub tb: Option<f64>,
    #[arg(long)]
    pub ts: Option<f64>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct GridArgs {
    /// Step, µs. Defaults to 0.004 (Markovian) or 0.001 (second order and
    /// baths).
    #[arg(long)]
    pub dt: Option<f64>,
    /// Last time, µs.
    #[arg(long, default_value_t = 2.5)]
    pub tmax: f64,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SourceArgs {
    #[arg(long, value_enum, default_value = "langevin")]
    pub source: SourceArg,
    /// Bath rotation frequency, rad/µs.
    #[arg(long)]
    pub omega_rot: Option<f64>,
    /// Bath driving strength A.
    #[arg(long)]
    pub bath_a: Option<f64>,
    /// Spread of the asymmetric bath's y-coupling.
    #[arg(long, default_value_t = 1.0)]
    pub sigma_y: f64,
    #[arg(long, value_enum, default_value = "exact")]
    pub integrator: IntegratorArg,
    #[arg(long, default_value_t = 1)]
    pub substeps: usize,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SeedArgs {
    /// Falls back to NOISE_WITNESS_SEED, then 0.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub ic: IcArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    /// Number of realizations.
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "csv")]
    pub format: FormatArg,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct CorrelateArgs {
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub ic: IcArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    /// Add ensemble estimates next to the closed form.
    #[arg(long)]
    pub empirical: bool,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Probe times, evenly spread over the grid.
    #[arg(long, default_value_t = 11)]
    pub points: usize,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct AnalyticArgs {
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub ic: IcArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    /// Extra white-noise dephasing time, µs.
    #[arg(long)]
    pub t2star: Option<f64>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub ic: IcArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct OracleArgs {
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub ic: IcArgs,
    /// Last time, µs.
    #[arg(long, default_value_t = 2.5)]
    pub tmax: f64,
    /// Evaluation times tmax·k/points, k = 1..points.
    #[arg(long, default_value_t = 10)]
    pub points: usize,
    #[arg(long, default_value_t = 1e-7)]
    pub tol: f64,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct FitArgs {
    /// Ramsey curves as CSV (t_us, signal[, stderr]).
    #[arg(required = true)]
    pub files: Vec<PathBuf>,
    /// Fit all files as one problem instead of one by one.
    #[arg(long)]
    pub joint: bool,
    /// Preparation per file (one value applies to all).
    #[arg(long, value_enum, value_delimiter = ',')]
    pub ics: Vec<IcArg>,
    /// Free parameters, e.g. `delta,tc`.
    #[arg(long, value_delimiter = ',', required = true)]
    pub free: Vec<String>,
    /// Free parameters common to all files of a joint fit.
    #[arg(long, value_delimiter = ',')]
    pub share: Vec<String>,
    /// `name=lo:hi` in canonical units.
    #[arg(long = "bound")]
    pub bounds: Vec<String>,
    /// `name=value` starting point in canonical units.
    #[arg(long = "init")]
    pub inits: Vec<String>,
    /// `label=value` shown as the injected column of the report.
    #[arg(long = "injected")]
    pub injected: Vec<String>,
    /// Divide each curve by its maximum before fitting.
    #[arg(long)]
    pub normalize: bool,
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub ic: IcArgs,
    /// Fixed extra white-noise dephasing time, µs.
    #[arg(long)]
    pub t2star: Option<f64>,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ClassifyArgs {
    #[arg(required = true, num_args = 1..=2)]
    pub files: Vec<PathBuf>,
    /// Preparation per file.
    #[arg(long, value_enum, value_delimiter = ',')]
    pub hints: Vec<HintArg>,
    #[arg(long)]
    pub normalize: bool,
}

#[derive(Args, Serialize, Deserialize, Clone, Debug, PartialEq)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub noise: NoiseArgs,
    #[command(flatten)]
    pub ic: IcArgs,
    #[command(flatten)]
    pub grid: GridArgs,
    #[command(flatten)]
    pub source: SourceArgs,
    #[command(flatten)]
    pub seed: SeedArgs,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    /// Probe times; all pairs among them are compared.
    #[arg(long, default_value_t = 16)]
    pub points: usize,
    /// Allowed deviation in standard errors.
    #[arg(long, default_value_t = 5.0)]
    pub k: f64,
    /// Extra allowed deviation in units of the stationary variance.
    #[arg(long, default_value_t = 0.0)]
    pub slack: f64,
}
