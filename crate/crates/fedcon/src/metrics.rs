//! Per-run metrics: action logs, regret accounting, phase statistics, and
//! their CSV form.
//!
//! Run CSV schema: `t,client,arm_id,keyterm_id,instant_regret,cum_regret,phase`
//! with one row per client per round, `keyterm_id = -1` when no conversation
//! happened, and `cum_regret` the global cumulative regret (summed over all
//! clients) after the row's action. Floats use shortest round-trip formatting
//! so `parse(emit(log)) == log` exactly.

use std::io::{BufRead, Write};

use crate::env::{EnvError, Environment};

#[derive(Debug, Clone, PartialEq)]
pub struct ActionRow {
    pub t: u64,
    pub client: u32,
    pub arm_id: u64,
    /// -1 when the round had no key-term query; under an overflow flag a
    /// round can carry more than one query, and only the first is recorded
    /// here (phase stats keep the exact counts).
    pub keyterm_id: i64,
    pub instant_regret: f64,
    pub cum_regret: f64,
    pub phase: u32,
}

/// Per-(client, phase) bookkeeping for the theorem meters.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseStat {
    pub client: u32,
    pub phase: u32,
    /// Effective dimension r the phase ran in.
    pub eff_dim: u32,
    /// λ_min of the design's information matrix (reduced coordinates).
    pub beta: f64,
    /// Threshold s_ℓ at the effective dimension.
    pub threshold: f64,
    /// Design support size.
    pub support: u32,
    /// Planned arm pulls Σ_a T_{i,ℓ}(a).
    pub arm_pulls: u64,
    /// Arm pulls actually executed (smaller when the horizon truncates).
    pub arm_pulls_executed: u64,
    /// Synchronization filler pulls beyond the plan.
    pub filler_pulls: u64,
    /// Σ n_k demanded by the downlink.
    pub keyterm_demand: u64,
    /// Key-term pulls actually executed.
    pub keyterm_pulls: u64,
    /// Demand exceeded one query per round.
    pub overflow: bool,
    /// Whole plan executed (phase not cut by the horizon).
    pub completed: bool,
    /// λ_min of the augmented information matrix (eigenvalue lemma).
    pub lemma_lambda_min: f64,
    /// Every matched key term satisfied |kᵀv| ≥ C.
    pub lemma_proviso_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    pub algo: String,
    pub seed: u64,
    pub clients: usize,
    pub horizon: u64,
    pub dim: usize,
    pub rows: Vec<ActionRow>,
    pub phase_stats: Vec<PhaseStat>,
    /// ‖θ̂_ℓ − θ*‖ per completed phase (baselines report one final entry).
    pub theta_err: Vec<(u32, f64)>,
    /// Total key-term queries over the run.
    pub keyterm_pulls: u64,
}

impl MetricsLog {
    pub fn final_cum_regret(&self) -> f64 {
        self.rows.last().map(|r| r.cum_regret).unwrap_or(0.0)
    }

    pub fn total_keyterm_pulls(&self) -> u64 {
        self.keyterm_pulls
    }

    pub fn num_phases(&self) -> u32 {
        self.phase_stats.iter().map(|p| p.phase).max().unwrap_or(0)
    }
}

/// Recomputes the cumulative regret series from a raw action log: per-client
/// optimum minus the pulled arm's mean, key-term queries contributing zero.
/// Returns one cumulative value per action, in log order.
pub fn compute_regret(
    actions: &[(u64, u32, u64)],
    env: &Environment,
) -> Result<Vec<f64>, EnvError> {
    let best: Vec<f64> = (0..env.num_clients()).map(|c| env.best_value(c)).collect();
    let mut cum = 0.0;
    let mut out = Vec::with_capacity(actions.len());
    for &(_t, client, arm) in actions {
        let c = client as usize;
        if c >= env.num_clients() || !env.client_arm_ids(c).contains(&(arm as usize)) {
            return Err(EnvError::UnknownArm { client: c, arm: arm as usize });
        }
        cum += best[c] - env.mean_arm_reward(arm as usize);
        out.push(cum);
    }
    Ok(out)
}

pub const RUN_CSV_HEADER: &str = "t,client,arm_id,keyterm_id,instant_regret,cum_regret,phase";

pub fn emit_run_csv(log: &MetricsLog, w: &mut impl Write) -> std::io::Result<()> {
    writeln!(w, "{RUN_CSV_HEADER}")?;
    for r in &log.rows {
        writeln!(
            w,
            "{},{},{},{},{:?},{:?},{}",
            r.t, r.client, r.arm_id, r.keyterm_id, r.instant_regret, r.cum_regret, r.phase
        )?;
    }
    Ok(())
}

pub fn parse_run_csv(r: impl BufRead) -> Result<Vec<ActionRow>, EnvError> {
    let mut rows = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if i == 0 {
            if line != RUN_CSV_HEADER {
                return Err(EnvError::BadFormat(format!("unexpected run CSV header: {line}")));
            }
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(EnvError::BadFormat(format!("run CSV line {} malformed", i + 1)));
        }
        let parse_err = |what: &str| EnvError::BadFormat(format!("line {}: bad {what}", i + 1));
        rows.push(ActionRow {
            t: f[0].parse().map_err(|_| parse_err("t"))?,
            client: f[1].parse().map_err(|_| parse_err("client"))?,
            arm_id: f[2].parse().map_err(|_| parse_err("arm_id"))?,
            keyterm_id: f[3].parse().map_err(|_| parse_err("keyterm_id"))?,
            instant_regret: f[4].parse().map_err(|_| parse_err("instant_regret"))?,
            cum_regret: f[5].parse().map_err(|_| parse_err("cum_regret"))?,
            phase: f[6].parse().map_err(|_| parse_err("phase"))?,
        });
    }
    Ok(rows)
}
