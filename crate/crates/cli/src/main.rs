//! `causalref`: reference-based and causal-model estimates for trials with missing
//! post-discontinuation data, plus the simulation study driver.

mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use causalref::bcm::{IntervalKind, K0Prior, PRIOR_GRAMMAR};
use causalref::{ErrorKind, VisitSchedule};
use clap::{Args, Parser, Subcommand, ValueEnum};

use commands::{Method, UsageError};

#[derive(Debug, Parser)]
#[command(name = "causalref", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Estimate the final-visit effect on a wide-format trial CSV.
    Analyze(AnalyzeArgs),
    /// Run a simulation study and write per-estimator metrics.
    Study(StudyArgs),
    /// Re-run a command from its manifest, or one replication of a study.
    Replay(ReplayArgs),
    /// Causal-model estimates over a grid of normal-prior SDs.
    Sweep(SweepArgs),
    /// True treatment-policy effect of a scenario by Monte Carlo.
    Oracle(OracleArgs),
    /// Plot-ready mean trajectories implied by the maintained-effect model.
    Trajectories(TrajectoriesArgs),
}

#[derive(Debug, Args)]
struct DataArgs {
    /// Wide CSV with header `id,arm,y0,...`; missing values are empty fields.
    #[arg(long)]
    data: PathBuf,
    /// Visit weeks binding the outcome columns, e.g. `0,4,8,14,20,26`.
    #[arg(long, value_parser = parse_schedule)]
    schedule: VisitSchedule,
}

#[derive(Debug, Args)]
struct SamplerArgs {
    /// Posterior draws kept after burn-in.
    #[arg(long, default_value_t = 10_000)]
    draws: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// First discontinuation pattern given Dirichlet mass; defaults to the earliest observed.
    #[arg(long)]
    d_min: Option<usize>,
    /// Inverse-Wishart prior degrees of freedom above the dimension.
    #[arg(long, default_value_t = 2.0)]
    iw_df_offset: f64,
}

#[derive(Debug, Args)]
struct AnalyzeArgs {
    #[command(flatten)]
    data: DataArgs,
    /// rubin:j2r, rubin:cir, condmean:j2r, condmean:cir or bcm; repeatable.
    #[arg(long = "method")]
    methods: Vec<Method>,
    #[arg(long = "prior", help = format!("Prior on k0 for bcm; repeatable. Grammar: {PRIOR_GRAMMAR}"))]
    priors: Vec<K0Prior>,
    /// Maintained-effect model used by bcm.
    #[arg(long, value_enum, default_value_t = ModelArg::Constant)]
    model: ModelArg,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, default_value_t = 100)]
    imputations: usize,
    /// Interval type for bcm; defaults to normal for normal and point priors, percentile otherwise.
    #[arg(long, value_enum)]
    interval: Option<IntervalArg>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct StudyArgs {
    /// Scenario TOML file or bundled name (high_alt, high_null, low_alt, low_null).
    #[arg(long)]
    scenario: String,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    n_per_arm: Option<usize>,
    #[arg(long)]
    imputations: Option<usize>,
    /// Posterior draws kept per replication.
    #[arg(long)]
    draws: Option<usize>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    threads: Option<usize>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Manifest written by a previous run.
    #[arg(long)]
    manifest: PathBuf,
    /// Re-run only this replication of a study manifest.
    #[arg(long)]
    index: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Defaults to `replay/` next to the manifest.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Prior mean of k0.
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    mean: f64,
    /// Prior SDs, e.g. `0,0.1,0.5,1`.
    #[arg(long, value_delimiter = ',', required = true, allow_negative_numbers = true)]
    sigmas: Vec<f64>,
    #[command(flatten)]
    sampler: SamplerArgs,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Scenario TOML file or bundled name.
    #[arg(long)]
    scenario: String,
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1", allow_negative_numbers = true)]
    k0: Vec<f64>,
    /// Monte Carlo sample size; defaults to the scenario's.
    #[arg(long)]
    n_mc: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Args)]
struct TrajectoriesArgs {
    /// Scenario supplying the arm means.
    #[arg(long, conflicts_with_all = ["data", "schedule"], required_unless_present = "data")]
    scenario: Option<String>,
    /// Dataset whose per-arm ML means are used instead of a scenario.
    #[arg(long, requires = "schedule")]
    data: Option<PathBuf>,
    #[arg(long, value_parser = parse_schedule)]
    schedule: Option<VisitSchedule>,
    /// Last on-treatment visit D.
    #[arg(long, default_value_t = 2)]
    pattern: usize,
    #[arg(long, value_enum, default_value_t = ModelArg::Constant)]
    model: ModelArg,
    /// Values of k0 (constant model) or k1 (decay model).
    #[arg(long, value_delimiter = ',', default_value = "0,0.5,1")]
    k: Vec<f64>,
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelArg {
    Constant,
    Decay,
}

impl From<ModelArg> for causalref::bcm::EffectKind {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Constant => Self::ConstantK0,
            ModelArg::Decay => Self::DecayK1,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum IntervalArg {
    Normal,
    Percentile,
}

impl From<IntervalArg> for IntervalKind {
    fn from(i: IntervalArg) -> Self {
        match i {
            IntervalArg::Normal => Self::NormalApprox,
            IntervalArg::Percentile => Self::Percentile,
        }
    }
}

fn parse_schedule(s: &str) -> Result<VisitSchedule, String> {
    VisitSchedule::parse(s).map_err(|e| e.to_string())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Analyze(a) => {
            let config = commands::AnalyzeConfig {
                data: a.data.data,
                schedule: a.data.schedule,
                methods: a.methods,
                priors: a.priors,
                model: a.model.into(),
                draws: a.sampler.draws,
                imputations: a.imputations,
                seed: a.sampler.seed,
                d_min: a.sampler.d_min,
                interval: a.interval.map(Into::into),
                iw_df_offset: a.sampler.iw_df_offset,
            };
            commands::analyze(config, &a.out_dir)
        }
        Command::Study(s) => {
            commands::init_threads(s.threads)?;
            let mut scenario = commands::resolve_scenario(&s.scenario)?;
            if let Some(r) = s.reps {
                scenario.reps = r;
            }
            if let Some(seed) = s.seed {
                scenario.seed = seed;
            }
            if let Some(n) = s.n_per_arm {
                scenario.n_per_arm = n;
            }
            if let Some(m) = s.imputations {
                scenario.imputations = m;
            }
            if let Some(d) = s.draws {
                scenario.gibbs.n_total = scenario.gibbs.n_burn + d * scenario.gibbs.thin;
            }
            scenario.validate()?;
            commands::study(commands::StudyConfig { scenario }, &s.out_dir)
        }
        Command::Replay(r) => {
            commands::init_threads(r.threads)?;
            commands::replay(&r.manifest, r.index, r.out_dir)
        }
        Command::Sweep(s) => {
            let config = commands::SweepConfig {
                data: s.data.data,
                schedule: s.data.schedule,
                mean: s.mean,
                sigmas: s.sigmas,
                draws: s.sampler.draws,
                seed: s.sampler.seed,
                d_min: s.sampler.d_min,
                iw_df_offset: s.sampler.iw_df_offset,
            };
            commands::sweep(config, &s.out_dir)
        }
        Command::Oracle(o) => {
            let scenario = commands::resolve_scenario(&o.scenario)?;
            let config = commands::OracleConfig {
                n_mc: o.n_mc.unwrap_or(scenario.oracle_n_mc),
                seed: o.seed.unwrap_or(scenario.seed),
                k0: o.k0,
                scenario,
            };
            commands::oracle(config, &o.out_dir)
        }
        Command::Trajectories(t) => {
            let config = commands::TrajectoriesConfig {
                scenario: t.scenario.as_deref().map(commands::resolve_scenario).transpose()?,
                data: t.data,
                schedule: t.schedule,
                pattern: t.pattern,
                model: t.model.into(),
                k: t.k,
            };
            commands::trajectories(config, &t.out_dir)
        }
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<causalref::Error>() {
            return match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            };
        }
        if cause.is::<UsageError>() {
            return 2;
        }
    }
    3
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
