//! Command-line front end: `run`, `sweep`, `verify`, `gen-data`, `ingest`.
//!
//! Set `FEDCON_LOG` (error/warn/info/debug/trace) to control log verbosity.

use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use fedcon::env::{
    self, assemble_environment, build_lowerbound_instance, generate_synthetic,
    ingest_feedback_matrix, read_feedback_csv, save_environment, Environment, SyntheticConfig,
};
use fedcon::harness::{
    emit_summary_csv, meter_reports_for, run_experiment_with, sweep, ExperimentConfig, SharedEnv,
    SweepAxis,
};

#[derive(Parser)]
#[command(name = "fedcon", version, about = "Federated conversational bandit simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment (all configured seeds) and write CSVs.
    Run(RunArgs),
    /// Run the experiment across a parameter axis and write sweep.csv.
    Sweep(SweepArgs),
    /// Run the configured fedconpe experiment and check the run-level
    /// guarantees (phase count, communication accounting, conversation
    /// frequency). Exits nonzero if any check fails.
    Verify(RunArgs),
    /// Generate an environment file (synthetic pool or lower-bound pair).
    GenData(GenDataArgs),
    /// Convert a feedback-matrix CSV into an environment file.
    Ingest(IngestArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the algorithm name.
    #[arg(long)]
    algo: Option<String>,
    /// Override the number of clients M.
    #[arg(long)]
    clients: Option<usize>,
    /// Override the per-client arm-set size K.
    #[arg(long)]
    arms: Option<usize>,
    /// Override the horizon T.
    #[arg(long)]
    horizon: Option<u64>,
    /// Override the seed list (comma separated).
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    /// Override the output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    base: RunArgs,
    /// Axis to sweep: clients | arms.
    #[arg(long)]
    axis: String,
    /// Strictly increasing axis values (comma separated).
    #[arg(long, value_delimiter = ',')]
    values: Vec<usize>,
}

#[derive(Args)]
struct GenDataArgs {
    /// Data kind: synthetic | lower-bound.
    #[arg(long)]
    kind: String,
    /// Output file (lower-bound also writes <out>.alt).
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    d: usize,
    /// Pool size (synthetic) or shared arm-set size (lower-bound).
    #[arg(long, default_value_t = 500)]
    num_arms: usize,
    #[arg(long, default_value_t = 500)]
    num_keyterms: usize,
    #[arg(long, default_value_t = 20)]
    num_users: usize,
    #[arg(long, default_value_t = 5)]
    relation_max: usize,
    /// Clients in the emitted environment.
    #[arg(long, default_value_t = 5)]
    clients: usize,
    /// Arms per client (synthetic assembly).
    #[arg(long, default_value_t = 50)]
    arms: usize,
    /// Horizon used for the lower-bound gap Δ = √((d−1)/(MT)).
    #[arg(long, default_value_t = 20_000)]
    horizon: u64,
    /// 0-indexed coordinate receiving 2Δ in the alternative environment.
    #[arg(long)]
    split_coord: Option<usize>,
    #[arg(long, default_value_t = 1.0)]
    noise_std: f64,
    /// User index whose preference vector becomes θ* (synthetic).
    #[arg(long, default_value_t = 0)]
    user: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct IngestArgs {
    /// Feedback CSV with header `user_id,item_id,value`.
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    d: usize,
    /// Binarize rule: value > threshold → 1 (omit when values are binary).
    #[arg(long)]
    binarize_threshold: Option<f64>,
    #[arg(long, default_value_t = 1)]
    clients: usize,
    /// Arms per client; capped at the number of usable items.
    #[arg(long, default_value_t = 50)]
    arms: usize,
    /// User row whose vector becomes θ*.
    #[arg(long, default_value_t = 0)]
    user: usize,
    #[arg(long, default_value_t = 1.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FEDCON_LOG", "warn")).init();
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Verify(args) => cmd_verify(args),
        Command::GenData(args) => cmd_gen_data(args),
        Command::Ingest(args) => cmd_ingest(args),
    }
}

fn load_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::from_path(&args.config)
        .with_context(|| format!("reading {}", args.config.display()))?;
    if let Some(algo) = &args.algo {
        cfg.algorithm.name = algo.clone();
    }
    if let Some(m) = args.clients {
        cfg.run.clients = m;
    }
    if let Some(k) = args.arms {
        cfg.run.arms_per_client = k;
    }
    if let Some(t) = args.horizon {
        cfg.run.horizon = t;
    }
    if let Some(seeds) = &args.seeds {
        cfg.run.seeds = seeds.clone();
    }
    if let Some(out) = &args.out {
        cfg.run.out_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    let shared = SharedEnv::build(&cfg)?;
    log::info!(
        "running {} on {} clients, K = {}, T = {}, {} seeds (richness estimate {:.3})",
        cfg.algorithm.name,
        cfg.run.clients,
        cfg.run.arms_per_client,
        cfg.run.horizon,
        cfg.run.seeds.len(),
        shared.richness_estimate
    );
    let result = run_experiment_with(&cfg, &shared)?;
    fedcon::harness::write_outputs(&cfg, &result)?;
    let s = &result.summary;
    println!(
        "{}: mean final regret {:.2} (median {:.2}, IQR [{:.2}, {:.2}]), \
         mean key-term pulls {:.1}, mean comm scalars {:.1}",
        s.algo,
        s.mean_final_regret,
        s.median_final_regret,
        s.q25_final_regret,
        s.q75_final_regret,
        s.mean_keyterm_pulls,
        s.mean_comm_scalars
    );
    println!(
        "wrote {} run files + comm.csv + summary.csv to {}",
        result.runs.len(),
        cfg.run.out_dir.display()
    );
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<()> {
    let cfg = load_config(&args.base)?;
    let axis = SweepAxis::from_name(&args.axis)
        .with_context(|| format!("unknown sweep axis `{}`", args.axis))?;
    if args.values.is_empty() {
        bail!("sweep needs at least one axis value");
    }
    let rows = sweep(&cfg, axis, &args.values)?;
    std::fs::create_dir_all(&cfg.run.out_dir)?;
    let path = cfg.run.out_dir.join("sweep.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
    emit_summary_csv(&rows, &mut f)?;
    for r in &rows {
        println!(
            "{} M={} K={}: mean final regret {:.2}",
            r.algo, r.clients, r.arms_per_client, r.mean_final_regret
        );
    }
    println!("wrote {}", path.display());
    Ok(())
}

fn cmd_verify(args: RunArgs) -> Result<()> {
    let cfg = load_config(&args)?;
    if cfg.algorithm.name != "fedconpe" {
        bail!("verify applies to the fedconpe algorithm, config says `{}`", cfg.algorithm.name);
    }
    let shared = SharedEnv::build(&cfg)?;
    let result = run_experiment_with(&cfg, &shared)?;
    let mut all_ok = true;
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for (seed, report) in meter_reports_for(&cfg, &result, &shared)? {
        writeln!(out, "seed {seed}:")?;
        report.print(&mut out)?;
        all_ok &= report.all_ok();
    }
    if !all_ok {
        bail!("one or more theorem meters failed");
    }
    println!("all meters passed");
    Ok(())
}

fn cmd_gen_data(args: GenDataArgs) -> Result<()> {
    match args.kind.as_str() {
        "synthetic" => {
            let data = generate_synthetic(&SyntheticConfig {
                d: args.d,
                num_users: args.num_users,
                num_arms: args.num_arms,
                num_keyterms: args.num_keyterms,
                relation_max: args.relation_max,
                seed: args.seed,
            })?;
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            rng.set_stream(0);
            let env = assemble_environment(
                &data,
                args.clients,
                args.arms,
                args.user,
                args.noise_std,
                &mut rng,
            )?;
            save_environment(&env, &args.out)?;
            println!("wrote synthetic environment to {}", args.out.display());
        }
        "lower-bound" | "lower_bound" => {
            let (base, alt) = build_lowerbound_instance(
                args.d,
                args.arms,
                args.clients,
                args.horizon,
                args.split_coord,
                args.seed,
            )?;
            save_environment(&base, &args.out)?;
            let mut alt_name = args.out.as_os_str().to_owned();
            alt_name.push(".alt");
            let alt_path = PathBuf::from(alt_name);
            save_environment(&alt, &alt_path)?;
            println!(
                "wrote lower-bound pair to {} and {} (gap Δ = {:.6})",
                args.out.display(),
                alt_path.display(),
                base.theta_star[0]
            );
        }
        other => bail!("unknown gen-data kind `{other}` (use synthetic or lower-bound)"),
    }
    Ok(())
}

fn cmd_ingest(args: IngestArgs) -> Result<()> {
    let matrix = read_feedback_csv(&args.input, args.binarize_threshold)?;
    let result = ingest_feedback_matrix(&matrix, args.d)?;
    // Items without signal in the top-d factors cannot serve as unit arms.
    let arms: Vec<nalgebra::DVector<f64>> =
        result.arms.into_iter().filter(|a| a.norm() > 0.5).collect();
    if arms.len() < args.d {
        bail!("only {} usable arms after ingestion; need at least d = {}", arms.len(), args.d);
    }
    if args.user >= result.users.len() {
        bail!("user index {} out of range ({} users)", args.user, result.users.len());
    }
    let arms_per_client = args.arms.min(arms.len());
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut clients = Vec::with_capacity(args.clients);
    for _ in 0..args.clients {
        clients.push(env::draw_spanning_arm_subset(&arms, arms_per_client, args.d, &mut rng)?);
    }
    let theta = env::clamp_to_unit_ball(result.users[args.user].clone());
    let environment = Environment {
        dim: args.d,
        arms: arms.clone(),
        key_terms: arms,
        clients,
        theta_star: theta,
        noise_std: args.noise_std,
    };
    environment.validate()?;
    save_environment(&environment, &args.out)?;
    println!(
        "ingested {} users x {} items into {} (d = {}, {} arms kept)",
        matrix.num_users,
        matrix.num_items,
        args.out.display(),
        args.d,
        environment.arms.len()
    );
    Ok(())
}
