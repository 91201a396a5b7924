//! Experiment runner: config parsing, seeded multi-run execution, summary
//! statistics, theorem meters, and CSV emission.
//!
//! Config files are TOML with three sections (`[environment]`, `[algorithm]`,
//! `[run]`); the CLI can override the algorithm name, client count, arm-set
//! size, horizon, seed list, and output directory. Seeds execute in parallel,
//! each owning its run state; outputs are written sequentially in seed order,
//! so two invocations of the same config produce bit-identical files.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baselines::{self, BaselineAlgo, ConversationSchedule};
use crate::env::{
    self, build_lowerbound_instance, estimate_richness_c,
    generate_synthetic, ingest_feedback_matrix, read_feedback_csv, EnvError, Environment,
    SyntheticConfig,
};
use crate::fedconpe::{default_n_const, AlgoConfig, FedError};
use crate::metrics::{emit_run_csv, MetricsLog};
use crate::protocol::{run_fedconpe, Transcript};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Fed(#[from] FedError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("could not parse config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("theorem meters only apply to fedconpe runs, got `{0}`")]
    WrongAlgorithm(String),
}

const FEDCONPE: &str = "fedconpe";
const FEDCONPE_NOCOMM: &str = "fedconpe-nocomm";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    /// synthetic | lower_bound | file | feedback
    #[serde(default = "default_env_kind")]
    pub kind: String,
    #[serde(default = "default_dim")]
    pub d: usize,
    #[serde(default = "default_num_arms")]
    pub num_arms: usize,
    #[serde(default = "default_num_keyterms")]
    pub num_keyterms: usize,
    #[serde(default = "default_num_users")]
    pub num_users: usize,
    #[serde(default = "default_relation_max")]
    pub relation_max: usize,
    #[serde(default = "default_noise_std")]
    pub noise_std: f64,
    /// Seed for the data pool itself (fixed across run seeds, like a dataset).
    #[serde(default)]
    pub env_seed: u64,
    /// Environment file (kind = file) or feedback CSV (kind = feedback).
    #[serde(default)]
    pub path: Option<PathBuf>,
    /// Binarize rule for feedback CSVs: value > threshold → 1.
    #[serde(default)]
    pub binarize_threshold: Option<f64>,
    /// Coordinate receiving 2Δ in the lower-bound instance.
    #[serde(default)]
    pub split_coord: Option<usize>,
}

fn default_env_kind() -> String {
    "synthetic".into()
}
fn default_dim() -> usize {
    10
}
fn default_num_arms() -> usize {
    500
}
fn default_num_keyterms() -> usize {
    500
}
fn default_num_users() -> usize {
    20
}
fn default_relation_max() -> usize {
    5
}
fn default_noise_std() -> f64 {
    1.0
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmSection {
    #[serde(default = "default_algo_name")]
    pub name: String,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Exploration constant N; defaults to max(1, 1/C²).
    #[serde(default)]
    pub n_const: Option<f64>,
    /// Richness constant C; defaults to an estimate from the key-term pool.
    #[serde(default)]
    pub richness_c: Option<f64>,
    #[serde(default = "default_design_tol")]
    pub design_tol: f64,
    #[serde(default = "default_design_max_iter")]
    pub design_max_iter: usize,
    /// Baseline exploration weight; defaults to 1 + √(ln(2T)/2).
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default = "default_lambda_reg")]
    pub lambda_reg: f64,
    /// log | linear
    #[serde(default = "default_schedule")]
    pub schedule: String,
    #[serde(default = "default_schedule_factor")]
    pub schedule_factor: f64,
    #[serde(default = "default_schedule_divisor")]
    pub schedule_divisor: u64,
}

fn default_algo_name() -> String {
    FEDCONPE.into()
}
fn default_delta() -> f64 {
    0.05
}
fn default_design_tol() -> f64 {
    1e-2
}
fn default_design_max_iter() -> usize {
    10_000
}
fn default_lambda_reg() -> f64 {
    1.0
}
fn default_schedule() -> String {
    "log".into()
}
fn default_schedule_factor() -> f64 {
    5.0
}
fn default_schedule_divisor() -> u64 {
    50
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default = "default_arms_per_client")]
    pub arms_per_client: usize,
    #[serde(default = "default_horizon")]
    pub horizon: u64,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
}

fn default_clients() -> usize {
    5
}
fn default_arms_per_client() -> usize {
    50
}
fn default_horizon() -> u64 {
    20_000
}
fn default_seeds() -> Vec<u64> {
    (1..=10).collect()
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentSection,
    pub algorithm: AlgorithmSection,
    pub run: RunSection,
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        Ok(toml::from_str(s)?)
    }

    pub fn from_path(path: &Path) -> Result<Self, HarnessError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.run.horizon < 1 {
            return Err(HarnessError::Config("horizon must be at least 1".into()));
        }
        if self.run.seeds.is_empty() {
            return Err(HarnessError::Config("seed list must be nonempty".into()));
        }
        if self.run.clients == 0 {
            return Err(HarnessError::Config("need at least one client".into()));
        }
        if self.run.arms_per_client < self.environment.d {
            return Err(HarnessError::Config(format!(
                "arm-set size {} below dimension {}; spanning arm sets need K ≥ d",
                self.run.arms_per_client, self.environment.d
            )));
        }
        let name = self.algorithm.name.as_str();
        if name != FEDCONPE && name != FEDCONPE_NOCOMM && BaselineAlgo::from_name(name).is_none() {
            return Err(HarnessError::Config(format!("unknown algorithm `{name}`")));
        }
        match self.environment.kind.as_str() {
            "synthetic" | "lower_bound" => {}
            "file" | "feedback" => {
                if self.environment.path.is_none() {
                    return Err(HarnessError::Config(format!(
                        "environment kind `{}` needs a path",
                        self.environment.kind
                    )));
                }
            }
            other => return Err(HarnessError::Config(format!("unknown environment kind `{other}`"))),
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<ConversationSchedule, HarnessError> {
        match self.algorithm.schedule.as_str() {
            "log" => Ok(ConversationSchedule::log(self.algorithm.schedule_factor)),
            "linear" => Ok(ConversationSchedule::linear(self.algorithm.schedule_divisor)),
            other => Err(HarnessError::Config(format!("unknown schedule `{other}`"))),
        }
    }
}

/// Dataset-like state shared by every seed of one experiment.
pub struct SharedEnv {
    /// Fixed environment (file / lower_bound kinds); per-seed assembly
    /// otherwise.
    fixed: Option<Environment>,
    pool_arms: Vec<nalgebra::DVector<f64>>,
    pool_key_terms: Vec<nalgebra::DVector<f64>>,
    pool_users: Vec<nalgebra::DVector<f64>>,
    /// Estimated richness of the key-term pool.
    pub richness_estimate: f64,
}

impl SharedEnv {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self, HarnessError> {
        let e = &cfg.environment;
        let (fixed, arms, key_terms, users) = match e.kind.as_str() {
            "synthetic" => {
                let data = generate_synthetic(&SyntheticConfig {
                    d: e.d,
                    num_users: e.num_users,
                    num_arms: e.num_arms,
                    num_keyterms: e.num_keyterms,
                    relation_max: e.relation_max,
                    seed: e.env_seed,
                })?;
                (None, data.arms, data.key_terms, data.users)
            }
            "lower_bound" => {
                let (base, _alt) = build_lowerbound_instance(
                    e.d,
                    cfg.run.arms_per_client,
                    cfg.run.clients,
                    cfg.run.horizon,
                    e.split_coord,
                    e.env_seed,
                )?;
                let arms = base.arms.clone();
                let kts = base.key_terms.clone();
                (Some(base), arms, kts, Vec::new())
            }
            "file" => {
                let path = e.path.as_ref().expect("validated");
                let env = env::load_environment(path)?;
                if env.num_clients() != cfg.run.clients {
                    return Err(HarnessError::Config(format!(
                        "environment file has {} clients, config says {}",
                        env.num_clients(),
                        cfg.run.clients
                    )));
                }
                let arms = env.arms.clone();
                let kts = env.key_terms.clone();
                (Some(env), arms, kts, Vec::new())
            }
            "feedback" => {
                let path = e.path.as_ref().expect("validated");
                let matrix = read_feedback_csv(path, e.binarize_threshold)?;
                let result = ingest_feedback_matrix(&matrix, e.d)?;
                // Items with no signal in the top-d factors drop out of the
                // pool; remaining arms double as the key-term set.
                let arms: Vec<_> =
                    result.arms.into_iter().filter(|a| a.norm() > 0.5).collect();
                if arms.len() < e.d {
                    return Err(HarnessError::Config(
                        "feedback matrix leaves fewer arms than dimensions".into(),
                    ));
                }
                let users: Vec<_> =
                    result.users.into_iter().map(env::clamp_to_unit_ball).collect();
                (None, arms.clone(), arms, users)
            }
            _ => unreachable!("validated"),
        };
        let mut probe_rng = ChaCha8Rng::seed_from_u64(e.env_seed ^ 0x9e3779b97f4a7c15);
        let richness_estimate = estimate_richness_c(&key_terms, 2000, &mut probe_rng)?;
        Ok(Self { fixed, pool_arms: arms, pool_key_terms: key_terms, pool_users: users, richness_estimate })
    }

    /// Environment for one run seed: fixed kinds return as-is; pool kinds
    /// draw the user and the per-client arm subsets from the seed.
    pub fn environment_for_seed(
        &self,
        cfg: &ExperimentConfig,
        seed: u64,
    ) -> Result<Environment, HarnessError> {
        if let Some(env) = &self.fixed {
            return Ok(env.clone());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0);
        let user_index = rng.random_range(0..self.pool_users.len());
        let mut clients = Vec::with_capacity(cfg.run.clients);
        for _ in 0..cfg.run.clients {
            clients.push(env::draw_spanning_arm_subset(
                &self.pool_arms,
                cfg.run.arms_per_client,
                cfg.environment.d,
                &mut rng,
            )?);
        }
        let env = Environment {
            dim: cfg.environment.d,
            arms: self.pool_arms.clone(),
            key_terms: self.pool_key_terms.clone(),
            clients,
            theta_star: self.pool_users[user_index].clone(),
            noise_std: cfg.environment.noise_std,
        };
        env.validate()?;
        Ok(env)
    }

    /// Algorithm parameters with config overrides applied over the defaults.
    pub fn algo_config(&self, cfg: &ExperimentConfig) -> AlgoConfig {
        let c = cfg.algorithm.richness_c.unwrap_or(self.richness_estimate).clamp(1e-6, 1.0);
        let n = cfg.algorithm.n_const.unwrap_or_else(|| default_n_const(c));
        AlgoConfig {
            horizon: cfg.run.horizon,
            num_clients: cfg.run.clients,
            dim: cfg.environment.d,
            arms_per_client: cfg.run.arms_per_client,
            delta: cfg.algorithm.delta,
            n_const: n,
            richness_c: c,
            design_tol: cfg.algorithm.design_tol,
            design_max_iter: cfg.algorithm.design_max_iter,
        }
    }
}

/// One seed's outputs.
#[derive(Debug)]
pub struct SeedRun {
    pub seed: u64,
    pub metrics: MetricsLog,
    pub transcript: Option<Transcript>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub algo: String,
    pub clients: usize,
    pub arms_per_client: usize,
    pub horizon: u64,
    pub num_seeds: usize,
    pub mean_final_regret: f64,
    pub median_final_regret: f64,
    pub q25_final_regret: f64,
    pub q75_final_regret: f64,
    pub mean_keyterm_pulls: f64,
    pub mean_comm_scalars: f64,
}

#[derive(Debug)]
pub struct ExperimentResult {
    pub runs: Vec<SeedRun>,
    pub summary: SummaryRow,
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentResult, HarnessError> {
    cfg.validate()?;
    let shared = SharedEnv::build(cfg)?;
    run_experiment_with(cfg, &shared)
}

/// Like [`run_experiment`] but reuses an already-built data pool; sweeps use
/// this to hold the dataset fixed across axis values.
pub fn run_experiment_with(
    cfg: &ExperimentConfig,
    shared: &SharedEnv,
) -> Result<ExperimentResult, HarnessError> {
    let runs: Vec<SeedRun> = cfg
        .run
        .seeds
        .par_iter()
        .map(|&seed| run_one_seed(cfg, shared, seed))
        .collect::<Result<_, _>>()?;
    let summary = summarize(cfg, &runs);
    Ok(ExperimentResult { runs, summary })
}

fn run_one_seed(
    cfg: &ExperimentConfig,
    shared: &SharedEnv,
    seed: u64,
) -> Result<SeedRun, HarnessError> {
    let env = shared.environment_for_seed(cfg, seed)?;
    let name = cfg.algorithm.name.as_str();
    if name == FEDCONPE {
        let algo_cfg = shared.algo_config(cfg);
        let out = run_fedconpe(&env, &algo_cfg, seed)?;
        return Ok(SeedRun { seed, metrics: out.metrics, transcript: Some(out.transcript) });
    }
    if name == FEDCONPE_NOCOMM {
        let algo_cfg = shared.algo_config(cfg);
        let metrics = run_fedconpe_nocomm(&env, &algo_cfg, seed)?;
        return Ok(SeedRun { seed, metrics, transcript: None });
    }
    let algo = BaselineAlgo::from_name(name).expect("validated");
    let alpha = cfg.algorithm.alpha.unwrap_or_else(|| baselines::default_alpha(cfg.run.horizon));
    let metrics = baselines::run_baseline(
        &env,
        algo,
        cfg.schedule()?,
        alpha,
        cfg.algorithm.lambda_reg,
        cfg.run.horizon,
        seed,
    )?;
    Ok(SeedRun { seed, metrics, transcript: None })
}

/// Sum-style no-communication variant: every client runs the single-client
/// algorithm independently (M = 1 inside all formulas, its own server), and
/// the logs merge into one. Used as the federation-benefit control.
pub fn run_fedconpe_nocomm(
    env: &Environment,
    base: &AlgoConfig,
    seed: u64,
) -> Result<MetricsLog, FedError> {
    let m = env.num_clients();
    let sub_cfg = AlgoConfig { num_clients: 1, ..base.clone() };
    let mut sub_logs = Vec::with_capacity(m);
    for c in 0..m {
        let sub_env = Environment { clients: vec![env.clients[c].clone()], ..env.clone() };
        let out = run_fedconpe(&sub_env, &sub_cfg, seed.wrapping_add((c as u64) << 32))?;
        sub_logs.push(out.metrics);
    }
    let mut merged = MetricsLog {
        algo: FEDCONPE_NOCOMM.into(),
        seed,
        clients: m,
        horizon: base.horizon,
        dim: env.dim,
        ..MetricsLog::default()
    };
    let mut cum = 0.0;
    for t in 0..base.horizon as usize {
        for (c, sub) in sub_logs.iter().enumerate() {
            let row = &sub.rows[t];
            debug_assert_eq!(row.t, t as u64 + 1);
            let mut row = row.clone();
            row.client = c as u32;
            cum += row.instant_regret;
            row.cum_regret = cum;
            merged.rows.push(row);
        }
    }
    for (c, sub) in sub_logs.iter().enumerate() {
        for stat in &sub.phase_stats {
            let mut stat = stat.clone();
            stat.client = c as u32;
            merged.phase_stats.push(stat);
        }
        merged.keyterm_pulls += sub.keyterm_pulls;
        merged.theta_err.extend(sub.theta_err.iter().cloned());
    }
    Ok(merged)
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn summarize(cfg: &ExperimentConfig, runs: &[SeedRun]) -> SummaryRow {
    let mut finals: Vec<f64> = runs.iter().map(|r| r.metrics.final_cum_regret()).collect();
    finals.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean = finals.iter().sum::<f64>() / finals.len() as f64;
    let mean_kt = runs.iter().map(|r| r.metrics.total_keyterm_pulls() as f64).sum::<f64>()
        / runs.len() as f64;
    let mean_comm = runs
        .iter()
        .map(|r| r.transcript.as_ref().map(|t| t.total_scalars() as f64).unwrap_or(0.0))
        .sum::<f64>()
        / runs.len() as f64;
    SummaryRow {
        algo: cfg.algorithm.name.clone(),
        clients: cfg.run.clients,
        arms_per_client: cfg.run.arms_per_client,
        horizon: cfg.run.horizon,
        num_seeds: runs.len(),
        mean_final_regret: mean,
        median_final_regret: quantile(&finals, 0.5),
        q25_final_regret: quantile(&finals, 0.25),
        q75_final_regret: quantile(&finals, 0.75),
        mean_keyterm_pulls: mean_kt,
        mean_comm_scalars: mean_comm,
    }
}

pub const SUMMARY_CSV_HEADER: &str = "algo,clients,arms_per_client,horizon,seeds,\
mean_final_regret,median_final_regret,q25_final_regret,q75_final_regret,\
mean_keyterm_pulls,mean_comm_scalars";

pub fn emit_summary_csv(rows: &[SummaryRow], w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{SUMMARY_CSV_HEADER}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{:?},{:?},{:?},{:?},{:?},{:?}",
            r.algo,
            r.clients,
            r.arms_per_client,
            r.horizon,
            r.num_seeds,
            r.mean_final_regret,
            r.median_final_regret,
            r.q25_final_regret,
            r.q75_final_regret,
            r.mean_keyterm_pulls,
            r.mean_comm_scalars
        )?;
    }
    Ok(())
}

/// Writes `run_seed<N>.csv` per seed, `comm.csv` (transcript records with a
/// leading seed column), and `summary.csv` into the output directory.
pub fn write_outputs(cfg: &ExperimentConfig, result: &ExperimentResult) -> Result<(), HarnessError> {
    let dir = &cfg.run.out_dir;
    std::fs::create_dir_all(dir)?;
    for run in &result.runs {
        let f = std::fs::File::create(dir.join(format!("run_seed{}.csv", run.seed)))?;
        let mut f = std::io::BufWriter::new(f);
        emit_run_csv(&run.metrics, &mut f)?;
    }
    let mut comm = std::io::BufWriter::new(std::fs::File::create(dir.join("comm.csv"))?);
    writeln!(comm, "seed,phase,client,direction,scalar_count")?;
    for run in &result.runs {
        if let Some(t) = &run.transcript {
            for r in &t.records {
                writeln!(
                    comm,
                    "{},{},{},{},{}",
                    run.seed,
                    r.phase,
                    r.client,
                    r.direction.as_str(),
                    r.scalar_count
                )?;
            }
        }
    }
    let summary = std::fs::File::create(dir.join("summary.csv"))?;
    let mut summary = std::io::BufWriter::new(summary);
    emit_summary_csv(std::slice::from_ref(&result.summary), &mut summary)?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Clients,
    Arms,
}

impl SweepAxis {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "clients" | "M" | "m" => Some(SweepAxis::Clients),
            "arms" | "K" | "k" => Some(SweepAxis::Arms),
            _ => None,
        }
    }
}

/// Runs the experiment once per axis value (all other parameters fixed, the
/// data pool shared) and returns one summary row per value.
pub fn sweep(
    cfg: &ExperimentConfig,
    axis: SweepAxis,
    values: &[usize],
) -> Result<Vec<SummaryRow>, HarnessError> {
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(HarnessError::Config("sweep values must be strictly increasing".into()));
    }
    cfg.validate()?;
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut point = cfg.clone();
        match axis {
            SweepAxis::Clients => point.run.clients = v,
            SweepAxis::Arms => point.run.arms_per_client = v,
        }
        point.validate()?;
        let shared = SharedEnv::build(&point)?;
        let result = run_experiment_with(&point, &shared)?;
        rows.push(result.summary);
    }
    Ok(rows)
}

/// Theorem meters for one fedconpe run.
#[derive(Debug, Clone)]
pub struct MeterReport {
    pub num_phases: u32,
    pub phase_count_bound: u32,
    pub phase_count_ok: bool,
    pub comm_total: u64,
    pub comm_replay_total: u64,
    pub comm_equal_ok: bool,
    pub comm_bound: u64,
    pub comm_bound_ok: bool,
    /// (client, phase, ok) for the conversation-frequency checks.
    pub conversation_checks: Vec<(u32, u32, bool)>,
    pub conversation_ok: bool,
}

impl MeterReport {
    pub fn all_ok(&self) -> bool {
        self.phase_count_ok && self.comm_equal_ok && self.comm_bound_ok && self.conversation_ok
    }

    pub fn print(&self, w: &mut impl Write) -> std::io::Result<()> {
        let tick = |ok: bool| if ok { "ok" } else { "FAIL" };
        writeln!(
            w,
            "phase_count_ok: {} (L = {} <= {})",
            tick(self.phase_count_ok),
            self.num_phases,
            self.phase_count_bound
        )?;
        writeln!(
            w,
            "comm_accounting_ok: {} (ledger = {}, replay = {})",
            tick(self.comm_equal_ok),
            self.comm_total,
            self.comm_replay_total
        )?;
        writeln!(
            w,
            "comm_bound_ok: {} (total = {} <= {})",
            tick(self.comm_bound_ok),
            self.comm_total,
            self.comm_bound
        )?;
        let bad = self.conversation_checks.iter().filter(|(_, _, ok)| !ok).count();
        writeln!(
            w,
            "conversation_bound_ok: {} ({} of {} client-phases pass)",
            tick(self.conversation_ok),
            self.conversation_checks.len() - bad,
            self.conversation_checks.len()
        )?;
        Ok(())
    }
}

/// Evaluates the three run-level guarantees on a finished fedconpe run: the
/// phase-count bound L ≤ ⌊log₂T⌋ + 1, exact communication accounting with the
/// closed-form scalar bound M·L·(2d² + 6d + 4), and the per-(client, phase)
/// conversation-frequency bound with its ceiling slack.
pub fn theorem_meters(
    metrics: &MetricsLog,
    transcript: &Transcript,
    algo_cfg: &AlgoConfig,
) -> Result<MeterReport, HarnessError> {
    if metrics.algo != FEDCONPE {
        return Err(HarnessError::WrongAlgorithm(metrics.algo.clone()));
    }
    let num_phases = metrics.num_phases();
    let phase_count_bound = (algo_cfg.horizon as f64).log2().floor() as u32 + 1;
    let phase_count_ok = num_phases <= phase_count_bound;

    let comm_total = transcript.total_scalars();
    let comm_replay_total = transcript.replay_total();
    let comm_equal_ok =
        comm_total == comm_replay_total && comm_total == transcript.record_total();
    let d = algo_cfg.dim as u64;
    let comm_bound = algo_cfg.num_clients as u64
        * num_phases as u64
        * (2 * d * d + 6 * d + 4);
    let comm_bound_ok = comm_total <= comm_bound;

    let mut conversation_checks = Vec::new();
    for stat in &metrics.phase_stats {
        let ok = if stat.beta >= stat.threshold {
            stat.keyterm_pulls == 0
        } else if !stat.completed {
            // A truncated phase executes a prefix of the schedule; demand is
            // still the binding quantity.
            stat.keyterm_pulls <= stat.keyterm_demand
        } else {
            let eps = AlgoConfig::epsilon(stat.phase as usize);
            let r = stat.eff_dim as f64;
            let bound = (3.0 / (4.0 * (1.0 - eps * eps)) - r * algo_cfg.n_const * stat.beta)
                / (algo_cfg.n_const * algo_cfg.richness_c * algo_cfg.richness_c);
            let slack = (r + stat.support as f64) / stat.arm_pulls as f64;
            let ratio = stat.keyterm_pulls as f64 / stat.arm_pulls as f64;
            ratio <= bound + slack + 1e-12
        };
        conversation_checks.push((stat.client, stat.phase, ok));
    }
    let conversation_ok = conversation_checks.iter().all(|&(_, _, ok)| ok);
    Ok(MeterReport {
        num_phases,
        phase_count_bound,
        phase_count_ok,
        comm_total,
        comm_replay_total,
        comm_equal_ok,
        comm_bound,
        comm_bound_ok,
        conversation_checks,
        conversation_ok,
    })
}

/// Aggregate of several per-seed meter reports, keyed for printing.
pub fn meter_reports_for(
    cfg: &ExperimentConfig,
    result: &ExperimentResult,
    shared: &SharedEnv,
) -> Result<Vec<(u64, MeterReport)>, HarnessError> {
    let algo_cfg = shared.algo_config(cfg);
    let mut out = Vec::new();
    for run in &result.runs {
        let transcript = run
            .transcript
            .as_ref()
            .ok_or_else(|| HarnessError::WrongAlgorithm(run.metrics.algo.clone()))?;
        out.push((run.seed, theorem_meters(&run.metrics, transcript, &algo_cfg)?));
    }
    Ok(out)
}

/// Convenience map view of summary rows for tests.
pub fn summaries_by_algo(rows: &[SummaryRow]) -> BTreeMap<String, &SummaryRow> {
    rows.iter().map(|r| (r.algo.clone(), r)).collect()
}
