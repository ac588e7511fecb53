use std::fmt;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use causalref::bcm::{
    bcm_estimate, decompose, draw_pi, implied_trajectory, normal_prior_sweep, EffectKind,
    IntervalKind, K0Prior, MaintainedEffectModel,
};
use causalref::data::{load_csv, pattern_counts};
use causalref::mmrm::{fit_mle, gibbs_sample, GibbsConfig, PosteriorDraws};
use causalref::rbi::{condmean_jackknife, rubin_estimate, RbiMethod};
use causalref::report::{write_records_csv, write_records_json, EstimateRecord};
use causalref::rng::{tagged_rng, StreamTag};
use causalref::sim::{
    run_replication, run_study, scenario_oracle, true_effect_oracle, write_replications_csv,
    ScenarioConfig,
};
use causalref::{Arm, TrialDataset, VisitSchedule};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::manifest::{to_table, RunManifest};

/// Bad flag combinations detected after parsing.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Rubin(RbiMethod),
    CondMean(RbiMethod),
    Bcm,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Rubin(m) => write!(f, "rubin:{m}"),
            Method::CondMean(m) => write!(f, "condmean:{m}"),
            Method::Bcm => f.write_str("bcm"),
        }
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("unknown method '{s}'; expected rubin:j2r|rubin:cir|condmean:j2r|condmean:cir|bcm");
        match s.trim().to_ascii_lowercase().split_once(':') {
            None if s.trim().eq_ignore_ascii_case("bcm") => Ok(Method::Bcm),
            Some(("rubin", m)) => m.parse().map(Method::Rubin).map_err(|_| bad()),
            Some(("condmean", m)) => m.parse().map(Method::CondMean).map_err(|_| bad()),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(s: String) -> std::result::Result<Self, String> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.to_string()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnalyzeConfig {
    pub data: PathBuf,
    pub schedule: VisitSchedule,
    pub methods: Vec<Method>,
    pub priors: Vec<K0Prior>,
    pub model: EffectKind,
    pub draws: usize,
    pub imputations: usize,
    pub seed: u64,
    pub d_min: Option<usize>,
    pub interval: Option<IntervalKind>,
    pub iw_df_offset: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyConfig {
    pub scenario: ScenarioConfig,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepConfig {
    pub data: PathBuf,
    pub schedule: VisitSchedule,
    pub mean: f64,
    pub sigmas: Vec<f64>,
    pub draws: usize,
    pub seed: u64,
    pub d_min: Option<usize>,
    pub iw_df_offset: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OracleConfig {
    pub scenario: ScenarioConfig,
    pub k0: Vec<f64>,
    pub n_mc: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrajectoriesConfig {
    pub scenario: Option<ScenarioConfig>,
    pub data: Option<PathBuf>,
    pub schedule: Option<VisitSchedule>,
    pub pattern: usize,
    pub model: EffectKind,
    pub k: Vec<f64>,
}

/// A scenario file path, or else the name of a bundled scenario.
pub fn resolve_scenario(spec: &str) -> Result<ScenarioConfig> {
    let path = Path::new(spec);
    if path.is_file() {
        return ScenarioConfig::load(path).with_context(|| format!("loading scenario {spec}"));
    }
    ScenarioConfig::bundled(spec).map_err(|_| {
        let names: Vec<_> = ScenarioConfig::bundled_names().collect();
        usage(format!("'{spec}' is neither a scenario file nor one of {}", names.join(", ")))
    })
}

pub fn init_threads(threads: Option<usize>) -> Result<()> {
    if let Some(n) = threads {
        if n == 0 {
            return Err(usage("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn absolute(path: &Path) -> Result<PathBuf> {
    fs::canonicalize(path).with_context(|| format!("cannot open {}", path.display()))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(create(path)?);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn posterior(
    data: &TrialDataset,
    draws: usize,
    seed: u64,
    iw_df_offset: f64,
) -> Result<PosteriorDraws> {
    let base = GibbsConfig::default();
    let config = GibbsConfig {
        n_total: base.n_burn + draws,
        seed: tagged_rng(seed, 0, StreamTag::GibbsReference).random(),
        iw_df_offset,
        ..base
    };
    Ok(gibbs_sample(data, &config)?)
}

fn bcm_label(kind: EffectKind, prior: &K0Prior) -> String {
    match kind {
        EffectKind::ConstantK0 => format!("bcm:{prior}"),
        EffectKind::DecayK1 => format!("bcm-decay:{prior}"),
    }
}

/// All requested estimates, in the order the methods were given, priors last.
pub fn run_analysis(config: &AnalyzeConfig) -> Result<Vec<EstimateRecord>> {
    if config.methods.is_empty() && config.priors.is_empty() {
        return Err(usage("give at least one --method or --prior"));
    }
    if config.methods.contains(&Method::Bcm) && config.priors.is_empty() {
        return Err(usage("--method bcm needs at least one --prior"));
    }
    let data = load_csv(&config.data, &config.schedule)?;
    let has_rubin = config.methods.iter().any(|m| matches!(m, Method::Rubin(_)));
    if has_rubin && (config.imputations < 2 || config.imputations > config.draws) {
        return Err(usage(format!("--imputations must be in 2..={}", config.draws)));
    }
    let draws = if has_rubin || !config.priors.is_empty() {
        Some(posterior(&data, config.draws, config.seed, config.iw_df_offset)?)
    } else {
        None
    };

    let condmean_methods: Vec<RbiMethod> = config
        .methods
        .iter()
        .filter_map(|m| match m {
            Method::CondMean(r) => Some(*r),
            _ => None,
        })
        .collect();
    let condmean = if condmean_methods.is_empty() {
        Vec::new()
    } else {
        condmean_jackknife(&data, &condmean_methods)?
    };
    let mut condmean = condmean.iter();

    let mut records = Vec::new();
    for method in &config.methods {
        match method {
            Method::Rubin(r) => {
                let d = draws.as_ref().expect("posterior drawn for rubin");
                let stride = (d.len() / config.imputations).max(1);
                let est = rubin_estimate(
                    &data,
                    &d.thinned(stride),
                    *r,
                    config.imputations,
                    &mut tagged_rng(config.seed, 0, StreamTag::Imputation),
                )?;
                records.push(EstimateRecord::from_pooled(method.to_string(), &est));
            }
            Method::CondMean(_) => {
                let est = condmean.next().expect("one jackknife result per method");
                records.push(EstimateRecord::from_jackknife(method.to_string(), est));
            }
            Method::Bcm => {}
        }
    }
    for prior in &config.priors {
        let d = draws.as_ref().expect("posterior drawn for bcm");
        let model = match config.model {
            EffectKind::ConstantK0 => MaintainedEffectModel::constant(*prior),
            EffectKind::DecayK1 => MaintainedEffectModel::decay(*prior)?,
        };
        let est = bcm_estimate(
            &data,
            d,
            &model,
            config.d_min,
            config.interval,
            &mut tagged_rng(config.seed, 0, StreamTag::Pi),
            &mut tagged_rng(config.seed, 0, StreamTag::K0),
        )?;
        records.push(EstimateRecord::from_summary(bcm_label(config.model, prior), &est));
    }
    Ok(records)
}

pub fn analyze(mut config: AnalyzeConfig, out_dir: &Path) -> Result<()> {
    config.data = absolute(&config.data)?;
    let mut manifest = RunManifest::start("analyze", config.seed, to_table(&config)?);
    let records = run_analysis(&config)?;
    fs::create_dir_all(out_dir)?;

    println!("{:<28} {:>9} {:>9} {:>20}", "method", "estimate", "se", "95% interval");
    for r in &records {
        println!(
            "{:<28} {:>9.3} {:>9.3}   ({:>7.3}, {:>7.3})",
            r.method, r.point, r.se, r.ci_low, r.ci_high
        );
    }
    let csv = out_dir.join("analyze_estimates.csv");
    let json = out_dir.join("analyze_estimates.json");
    write_records_csv(&records, create(&csv)?)?;
    write_records_json(&records, create(&json)?)?;
    manifest.outputs = vec![csv, json];
    manifest.finish(out_dir)?;
    Ok(())
}

pub fn study(config: StudyConfig, out_dir: &Path) -> Result<()> {
    let scenario = &config.scenario;
    let mut manifest = RunManifest::start("study", scenario.seed, to_table(&config)?);
    let out = run_study(scenario)?;
    fs::create_dir_all(out_dir)?;

    println!(
        "scenario {} ({} reps, n = {} per arm); true effect a + k0 b with a = {:.4}, b = {:.4}",
        scenario.name, scenario.reps, scenario.n_per_arm, out.oracle.a, out.oracle.b
    );
    println!(
        "{:<24} {:>8} {:>8} {:>8} {:>8} {:>9} {:>9}",
        "estimator", "mean", "true", "emp_se", "est_se", "coverage", "rejection"
    );
    for m in &out.report.rows {
        println!(
            "{:<24} {:>8.4} {:>8.4} {:>8.4} {:>8.4} {:>9.1} {:>9.1}",
            m.estimator, m.mean, m.true_value, m.emp_se, m.est_se, m.coverage_pct, m.rejection_pct
        );
    }
    let summary = out_dir.join("study_summary.csv");
    let reps = out_dir.join("study_replications.csv");
    out.report.write_csv(create(&summary)?)?;
    write_replications_csv(&out.replications, create(&reps)?)?;
    manifest.outputs = vec![summary, reps];
    manifest.finish(out_dir)?;
    Ok(())
}

#[derive(Serialize)]
struct SweepRow {
    sigma_k0: f64,
    point: f64,
    sd: f64,
    ci_low: f64,
    ci_high: f64,
}

pub fn sweep(mut config: SweepConfig, out_dir: &Path) -> Result<()> {
    if config.sigmas.is_empty() {
        return Err(usage("--sigmas needs at least one value"));
    }
    if let Some(s) = config.sigmas.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
        return Err(usage(format!("prior SD must be >= 0, got {s}")));
    }
    config.data = absolute(&config.data)?;
    let mut manifest = RunManifest::start("sweep", config.seed, to_table(&config)?);
    let data = load_csv(&config.data, &config.schedule)?;
    let draws = posterior(&data, config.draws, config.seed, config.iw_df_offset)?;
    let pi = draw_pi(
        &pattern_counts(&data, Arm::Active),
        config.d_min,
        draws.len(),
        &mut tagged_rng(config.seed, 0, StreamTag::Pi),
    )?;
    let ab = decompose(&draws.draws, &pi)?;
    let summaries = normal_prior_sweep(
        &ab,
        config.mean,
        &config.sigmas,
        &mut tagged_rng(config.seed, 0, StreamTag::K0),
    )?;
    let rows: Vec<SweepRow> = config
        .sigmas
        .iter()
        .zip(&summaries)
        .map(|(&sigma_k0, s)| SweepRow {
            sigma_k0,
            point: s.point,
            sd: s.sd,
            ci_low: s.ci_low,
            ci_high: s.ci_high,
        })
        .collect();
    fs::create_dir_all(out_dir)?;
    for r in &rows {
        println!(
            "sigma {:>6.3}: {:>8.3} ({:.3})  ({:.3}, {:.3})",
            r.sigma_k0, r.point, r.sd, r.ci_low, r.ci_high
        );
    }
    let path = out_dir.join("sweep.csv");
    write_rows(&path, &rows)?;
    manifest.outputs = vec![path];
    manifest.finish(out_dir)?;
    Ok(())
}

#[derive(Serialize)]
struct OracleRow {
    k0: f64,
    true_effect: f64,
    a_true: f64,
    b_true: f64,
    mcse: f64,
}

pub fn oracle(config: OracleConfig, out_dir: &Path) -> Result<()> {
    if config.n_mc == 0 {
        return Err(usage("--n-mc must be positive"));
    }
    let mut manifest = RunManifest::start("oracle", config.seed, to_table(&config)?);
    let o = true_effect_oracle(
        &config.scenario,
        config.n_mc,
        &mut tagged_rng(config.seed, 0, StreamTag::Oracle),
    )?;
    let rows: Vec<OracleRow> = config
        .k0
        .iter()
        .map(|&k0| OracleRow {
            k0,
            true_effect: o.effect(k0),
            a_true: o.a,
            b_true: o.b,
            mcse: o.mcse(k0),
        })
        .collect();
    fs::create_dir_all(out_dir)?;
    let pi: Vec<String> = o.pi.iter().map(|p| format!("{p:.4}")).collect();
    println!("active-arm pattern probabilities: {}", pi.join(" "));
    for r in &rows {
        println!("k0 = {:>5}: {:.4} (mcse {:.5})", r.k0, r.true_effect, r.mcse);
    }
    let path = out_dir.join("oracle.csv");
    write_rows(&path, &rows)?;
    manifest.outputs = vec![path];
    manifest.finish(out_dir)?;
    Ok(())
}

#[derive(Serialize)]
struct TrajectoryRow {
    series: &'static str,
    k: Option<f64>,
    visit: usize,
    week: f64,
    mean: f64,
}

pub fn trajectories(mut config: TrajectoriesConfig, out_dir: &Path) -> Result<()> {
    if let Some(d) = &config.data {
        config.data = Some(absolute(d)?);
    }
    let mut manifest = RunManifest::start("trajectories", 0, to_table(&config)?);
    let (active, reference, schedule) = match (&config.scenario, &config.data, &config.schedule) {
        (Some(s), _, _) => {
            let (a, r) = s.arm_params()?;
            (a.mean().clone(), r.mean().clone(), s.schedule.clone())
        }
        (None, Some(path), Some(schedule)) => {
            let fit = fit_mle(&load_csv(path, schedule)?)?;
            (fit.active.mean().clone(), fit.reference.mean().clone(), schedule.clone())
        }
        _ => bail!(UsageError("give --scenario, or --data with --schedule".into())),
    };
    if config.k.is_empty() {
        return Err(usage("--k needs at least one value"));
    }

    let mut rows = Vec::new();
    let mut push = |series, k, mean: &[f64]| {
        for (visit, &m) in mean.iter().enumerate() {
            rows.push(TrajectoryRow { series, k, visit, week: schedule.time(visit), mean: m });
        }
    };
    push("reference", None, reference.as_slice());
    push("active", None, active.as_slice());
    for &k in &config.k {
        let model = MaintainedEffectModel { kind: config.model, prior: K0Prior::Point(k) };
        let path = implied_trajectory(&active, &reference, config.pattern, &model, k, &schedule)?;
        push("implied", Some(k), path.as_slice());
    }
    fs::create_dir_all(out_dir)?;
    let path = out_dir.join("trajectories.csv");
    write_rows(&path, &rows)?;
    println!("wrote {} rows to {}", rows.len(), path.display());
    manifest.outputs = vec![path];
    manifest.finish(out_dir)?;
    Ok(())
}

fn from_table<T: serde::de::DeserializeOwned>(table: toml::Table) -> Result<T> {
    toml::Value::Table(table).try_into().context("manifest config does not match its command")
}

pub fn replay(path: &Path, index: Option<u64>, out_dir: Option<PathBuf>) -> Result<()> {
    let manifest = RunManifest::load(path)?;
    let out_dir = out_dir.unwrap_or_else(|| {
        path.parent().unwrap_or_else(|| Path::new(".")).join("replay")
    });
    let command = manifest.command.as_str();
    if let Some(i) = index {
        if command != "study" {
            return Err(usage("--index only applies to study manifests"));
        }
        let config: StudyConfig = from_table(manifest.config)?;
        let scenario = &config.scenario;
        if i >= scenario.reps as u64 {
            return Err(usage(format!("index {i} out of range for {} replications", scenario.reps)));
        }
        let oracle = scenario_oracle(scenario)?;
        let result = run_replication(scenario, &oracle, i)?;
        fs::create_dir_all(&out_dir)?;
        let out = out_dir.join(format!("replication_{i}.csv"));
        write_replications_csv(std::slice::from_ref(&result), create(&out)?)?;
        println!("wrote {}", out.display());
        return Ok(());
    }
    match command {
        "analyze" => analyze(from_table(manifest.config)?, &out_dir),
        "study" => study(from_table(manifest.config)?, &out_dir),
        "sweep" => sweep(from_table(manifest.config)?, &out_dir),
        "oracle" => oracle(from_table(manifest.config)?, &out_dir),
        "trajectories" => trajectories(from_table(manifest.config)?, &out_dir),
        other => Err(usage(format!("manifest names unknown command '{other}'"))),
    }
}
