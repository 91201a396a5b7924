//! Comparison policies: LinUCB, Arm-Con, ConUCB, and the ConLinUCB variants.
//!
//! All of them share one ridge-regression model per client (V̄ = λ·I + Σxxᵀ
//! pooled over arm pulls and conversational feedback, single shared θ) and
//! the classical UCB arm rule argmax aᵀθ̂ + α‖a‖_{V̄⁻¹}. They differ only in
//! what a conversation queries when the schedule b(t) fires:
//!
//! - Arm-Con queries the highest-index arm (arm-level feedback),
//! - ConLinUCB-BS picks uniformly from a barycentric spanner of the key terms,
//! - ConUCB and ConLinUCB-MCR pick the key term with the largest confidence
//!   radius ‖k‖_{V̄⁻¹},
//! - ConLinUCB-UCB picks the key term with the largest UCB index.
//!
//! With the schedule silent every variant's trajectory is bit-identical to
//! LinUCB under a shared random source. Ties break toward the lowest id.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::Environment;
use crate::fedconpe::FedError;
use crate::linalg::{barycentric_spanner, SymMatrix};
use crate::metrics::{ActionRow, MetricsLog};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleKind {
    /// b(t) = factor·⌊ln t⌋
    Log,
    /// b(t) = ⌊t / divisor⌋
    Linear,
}

/// Conversation frequency function b(t); a policy may issue
/// b(t) − b(t−1) queries at round t, so query counts after T rounds
/// telescope to exactly b(T).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConversationSchedule {
    pub kind: ScheduleKind,
    pub factor: f64,
    pub divisor: u64,
}

impl ConversationSchedule {
    pub fn log(factor: f64) -> Self {
        Self { kind: ScheduleKind::Log, factor, divisor: 1 }
    }

    pub fn linear(divisor: u64) -> Self {
        Self { kind: ScheduleKind::Linear, factor: 0.0, divisor }
    }

    /// Never fires.
    pub fn silent() -> Self {
        Self::log(0.0)
    }

    pub fn b(&self, t: u64) -> u64 {
        if t == 0 {
            return 0;
        }
        match self.kind {
            ScheduleKind::Log => (self.factor * (t as f64).ln().floor()).floor().max(0.0) as u64,
            ScheduleKind::Linear => t / self.divisor,
        }
    }

    /// Queries allowed at round t: max(0, b(t) − b(t−1)).
    pub fn queries_at(&self, t: u64) -> u64 {
        self.b(t).saturating_sub(self.b(t - 1))
    }
}

/// Shared ridge-regression state: V̄ = λ_reg·I + Σ xxᵀ with its inverse
/// maintained by rank-one updates, the moment vector, and θ̂ = V̄⁻¹·moment.
#[derive(Debug, Clone)]
pub struct UcbState {
    pub vbar: SymMatrix,
    vbar_inv: SymMatrix,
    pub moment: DVector<f64>,
    pub theta_hat: DVector<f64>,
    pub alpha: f64,
    pub lambda_reg: f64,
}

impl UcbState {
    pub fn new(dim: usize, alpha: f64, lambda_reg: f64) -> Self {
        assert!(lambda_reg > 0.0, "ridge parameter must be positive");
        let mut vbar = SymMatrix::identity(dim);
        vbar.scale(lambda_reg);
        let mut vbar_inv = SymMatrix::identity(dim);
        vbar_inv.scale(1.0 / lambda_reg);
        Self {
            vbar,
            vbar_inv,
            moment: DVector::zeros(dim),
            theta_hat: DVector::zeros(dim),
            alpha,
            lambda_reg,
        }
    }

    /// Rank-one update with an observed (feature, reward) pair.
    pub fn update(&mut self, x: &DVector<f64>, reward: f64) {
        let u = self.vbar_inv.mul_vec(x);
        let denom = 1.0 + x.dot(&u);
        self.vbar.add_scaled_outer(1.0, x);
        self.vbar_inv.add_scaled_outer(-1.0 / denom, &u);
        self.moment.axpy(reward, x, 1.0);
        self.theta_hat = self.vbar_inv.mul_vec(&self.moment);
    }

    /// ‖x‖_{V̄⁻¹}.
    pub fn conf_radius(&self, x: &DVector<f64>) -> f64 {
        self.vbar_inv.quad_form(x).max(0.0).sqrt()
    }

    /// UCB index xᵀθ̂ + α‖x‖_{V̄⁻¹}.
    pub fn index(&self, x: &DVector<f64>) -> f64 {
        x.dot(&self.theta_hat) + self.alpha * self.conf_radius(x)
    }
}

/// Default exploration weight when a run does not configure one.
pub fn default_alpha(horizon: u64) -> f64 {
    1.0 + ((2.0 * horizon as f64).ln() / 2.0).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaselineAlgo {
    LinUcb,
    ArmCon,
    ConUcb,
    ConLinUcbBs,
    ConLinUcbMcr,
    ConLinUcbUcb,
}

impl BaselineAlgo {
    pub fn name(self) -> &'static str {
        match self {
            BaselineAlgo::LinUcb => "linucb",
            BaselineAlgo::ArmCon => "armcon",
            BaselineAlgo::ConUcb => "conucb",
            BaselineAlgo::ConLinUcbBs => "conlinucb-bs",
            BaselineAlgo::ConLinUcbMcr => "conlinucb-mcr",
            BaselineAlgo::ConLinUcbUcb => "conlinucb-ucb",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "linucb" => BaselineAlgo::LinUcb,
            "armcon" | "arm-con" => BaselineAlgo::ArmCon,
            "conucb" => BaselineAlgo::ConUcb,
            "conlinucb-bs" => BaselineAlgo::ConLinUcbBs,
            "conlinucb-mcr" => BaselineAlgo::ConLinUcbMcr,
            "conlinucb-ucb" => BaselineAlgo::ConLinUcbUcb,
            _ => return None,
        })
    }

    /// Queries key terms (as opposed to arms or nothing) when the schedule
    /// fires.
    pub fn uses_key_terms(self) -> bool {
        !matches!(self, BaselineAlgo::LinUcb | BaselineAlgo::ArmCon)
    }
}

/// Picks the UCB-maximizing arm from the client's arm set, lowest id on ties.
pub fn linucb_select(state: &UcbState, env: &Environment, client: usize) -> usize {
    let mut best = env.client_arm_ids(client)[0];
    let mut best_idx = f64::NEG_INFINITY;
    for &id in env.client_arm_ids(client) {
        let idx = state.index(env.arm_vector(id));
        if idx > best_idx {
            best_idx = idx;
            best = id;
        }
    }
    best
}

/// One LinUCB round: select, pull, update.
pub fn linucb_step<R: Rng + ?Sized>(
    state: &mut UcbState,
    env: &Environment,
    client: usize,
    rng: &mut R,
) -> Result<usize, FedError> {
    let arm = linucb_select(state, env, client);
    let reward = env.sample_arm_reward(client, arm, rng)?;
    state.update(env.arm_vector(arm), reward);
    Ok(arm)
}

fn argmax_keyterm(env: &Environment, score: impl Fn(&DVector<f64>) -> f64) -> usize {
    let mut best = 0;
    let mut best_score = f64::NEG_INFINITY;
    for (k, v) in env.key_terms.iter().enumerate() {
        let s = score(v);
        if s > best_score {
            best_score = s;
            best = k;
        }
    }
    best
}

/// One conversational query for the given variant; returns the id queried
/// (arm id for Arm-Con, key-term id otherwise). `None` for plain LinUCB.
pub fn conversation_query<R: Rng + ?Sized>(
    algo: BaselineAlgo,
    state: &mut UcbState,
    env: &Environment,
    client: usize,
    spanner: &[usize],
    rng: &mut R,
) -> Result<Option<i64>, FedError> {
    match algo {
        BaselineAlgo::LinUcb => Ok(None),
        BaselineAlgo::ArmCon => {
            // Conversation about the currently highest-index arm.
            let arm = linucb_select(state, env, client);
            let feedback = env.sample_arm_reward(client, arm, rng)?;
            state.update(env.arm_vector(arm), feedback);
            Ok(Some(arm as i64))
        }
        BaselineAlgo::ConLinUcbBs => {
            let k = spanner[rng.random_range(0..spanner.len())];
            let feedback = env.sample_keyterm_reward(k, rng)?;
            state.update(env.keyterm_vector(k), feedback);
            Ok(Some(k as i64))
        }
        BaselineAlgo::ConUcb | BaselineAlgo::ConLinUcbMcr => {
            // Largest confidence radius over the shared model.
            let k = argmax_keyterm(env, |v| state.conf_radius(v));
            let feedback = env.sample_keyterm_reward(k, rng)?;
            state.update(env.keyterm_vector(k), feedback);
            Ok(Some(k as i64))
        }
        BaselineAlgo::ConLinUcbUcb => {
            let k = argmax_keyterm(env, |v| state.index(v));
            let feedback = env.sample_keyterm_reward(k, rng)?;
            state.update(env.keyterm_vector(k), feedback);
            Ok(Some(k as i64))
        }
    }
}

/// Runs a baseline on every client independently (no communication), under
/// one shared conversation schedule. Each client owns a random stream derived
/// from `seed`.
pub fn run_baseline(
    env: &Environment,
    algo: BaselineAlgo,
    schedule: ConversationSchedule,
    alpha: f64,
    lambda_reg: f64,
    horizon: u64,
    seed: u64,
) -> Result<MetricsLog, FedError> {
    let spanner = if algo == BaselineAlgo::ConLinUcbBs {
        if env.key_terms.is_empty() {
            return Err(FedError::EmptyKeyTermSet);
        }
        barycentric_spanner(&env.key_terms, 2.0)?
    } else {
        if algo.uses_key_terms() && env.key_terms.is_empty() {
            return Err(FedError::EmptyKeyTermSet);
        }
        Vec::new()
    };
    let m = env.num_clients();
    let mut states: Vec<UcbState> =
        (0..m).map(|_| UcbState::new(env.dim, alpha, lambda_reg)).collect();
    let mut rngs: Vec<ChaCha8Rng> = (0..m)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64 + 1);
            rng
        })
        .collect();
    let best: Vec<f64> = (0..m).map(|c| env.best_value(c)).collect();

    let mut log = MetricsLog {
        algo: algo.name().into(),
        seed,
        clients: m,
        horizon,
        dim: env.dim,
        ..MetricsLog::default()
    };
    let mut cum = 0.0;
    for t in 1..=horizon {
        let queries = schedule.queries_at(t);
        for c in 0..m {
            let mut first_query: i64 = -1;
            for q in 0..queries {
                let queried =
                    conversation_query(algo, &mut states[c], env, c, &spanner, &mut rngs[c])?;
                if let Some(id) = queried {
                    if algo.uses_key_terms() {
                        log.keyterm_pulls += 1;
                        if q == 0 {
                            first_query = id;
                        }
                    }
                }
            }
            let arm = linucb_step(&mut states[c], env, c, &mut rngs[c])?;
            let instant = best[c] - env.mean_arm_reward(arm);
            cum += instant;
            log.rows.push(ActionRow {
                t,
                client: c as u32,
                arm_id: arm as u64,
                keyterm_id: first_query,
                instant_regret: instant,
                cum_regret: cum,
                phase: 0,
            });
        }
    }
    for (c, state) in states.iter().enumerate() {
        let _ = c;
        log.theta_err.push((0, (&state.theta_hat - &env.theta_star).norm()));
    }
    Ok(log)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::DVector;

    fn unit(v: Vec<f64>) -> DVector<f64> {
        let v = DVector::from_vec(v);
        let n = v.norm();
        v / n
    }

    fn basis_env(noise: f64) -> Environment {
        let e = |i: usize| {
            DVector::from_fn(2, |j, _| if i == j { 1.0 } else { 0.0 })
        };
        Environment {
            dim: 2,
            arms: vec![e(0), e(1), unit(vec![1.0, 1.0])],
            key_terms: vec![e(0), e(1)],
            clients: vec![vec![0, 1, 2]],
            theta_star: DVector::from_vec(vec![0.8, 0.1]),
            noise_std: noise,
        }
    }

    #[test]
    fn log_schedule_values() {
        let s = ConversationSchedule::log(5.0);
        assert_eq!(s.b(1), 0);
        assert_eq!(s.queries_at(1), 0);
        // b(10) = 5⌊ln 10⌋ = 10 and b(9) = 5⌊ln 9⌋ = 10 → no query at t = 10.
        assert_eq!(s.b(10), 10);
        assert_eq!(s.b(9), 10);
        assert_eq!(s.queries_at(10), 0);
    }

    #[test]
    fn linear_schedule_fires_every_divisor() {
        let s = ConversationSchedule::linear(50);
        assert_eq!(s.queries_at(50), 1);
        assert_eq!(s.queries_at(49), 0);
        assert_eq!(s.b(500), 10);
    }

    #[test]
    fn query_totals_equal_b_of_t() {
        for s in [ConversationSchedule::log(5.0), ConversationSchedule::linear(50)] {
            for horizon in [1u64, 7, 100, 517] {
                let total: u64 = (1..=horizon).map(|t| s.queries_at(t)).sum();
                assert_eq!(total, s.b(horizon), "schedule {s:?} at T={horizon}");
            }
        }
    }

    #[test]
    fn cold_start_ties_break_to_lowest_id() {
        let env = basis_env(0.0);
        let state = UcbState::new(2, 1.7, 1.0);
        // All unit arms share the index α/√λ_reg at cold start.
        for &id in env.client_arm_ids(0) {
            assert_abs_diff_eq!(state.index(env.arm_vector(id)), 1.7, epsilon = 1e-12);
        }
        assert_eq!(linucb_select(&state, &env, 0), 0);
    }

    #[test]
    fn zero_alpha_converged_state_is_greedy() {
        let env = basis_env(0.0);
        let mut state = UcbState::new(2, 0.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..50 {
            for &id in env.client_arm_ids(0) {
                let r = env.sample_arm_reward(0, id, &mut rng).unwrap();
                state.update(env.arm_vector(id), r);
            }
        }
        // Best mean arm is arm 0 (0.8 > 0.64 > 0.1).
        assert_eq!(linucb_select(&state, &env, 0), 0);
    }

    #[test]
    fn ridge_estimate_matches_closed_form() {
        let env = basis_env(0.0);
        let mut state = UcbState::new(2, 1.0, 1.0);
        let arm = env.arm_vector(2).clone();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 5;
        for _ in 0..n {
            let r = env.sample_arm_reward(0, 2, &mut rng).unwrap();
            state.update(&arm, r);
        }
        // Closed form: (I + n aaᵀ)⁻¹ (Σ r)·a with identical noiseless rewards.
        let reward = arm.dot(&env.theta_star);
        let mut g = SymMatrix::identity(2);
        g.add_scaled_outer(n as f64, &arm);
        let rhs = &arm * (n as f64 * reward);
        let expect = crate::linalg::solve_linear_system(&g, &rhs).unwrap();
        assert!((&state.theta_hat - &expect).norm() < 1e-9);
    }

    #[test]
    fn vbar_keeps_ridge_floor() {
        let env = basis_env(1.0);
        let mut state = UcbState::new(2, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in 1..200u64 {
            let arm = (t % 3) as usize;
            let r = env.sample_arm_reward(0, arm, &mut rng).unwrap();
            state.update(env.arm_vector(arm), r);
        }
        let pairs = crate::linalg::spectral_decompose(&state.vbar).unwrap();
        assert!(pairs.last().unwrap().value >= 1.0 - 1e-9);
    }

    #[test]
    fn silent_schedule_reduces_every_variant_to_linucb() {
        let env = basis_env(1.0);
        let reference = run_baseline(
            &env,
            BaselineAlgo::LinUcb,
            ConversationSchedule::silent(),
            2.0,
            1.0,
            300,
            9,
        )
        .unwrap();
        for algo in [
            BaselineAlgo::ArmCon,
            BaselineAlgo::ConUcb,
            BaselineAlgo::ConLinUcbBs,
            BaselineAlgo::ConLinUcbMcr,
            BaselineAlgo::ConLinUcbUcb,
        ] {
            let log =
                run_baseline(&env, algo, ConversationSchedule::silent(), 2.0, 1.0, 300, 9).unwrap();
            let same: Vec<(u64, u64)> =
                log.rows.iter().map(|r| (r.t, r.arm_id)).collect();
            let expect: Vec<(u64, u64)> =
                reference.rows.iter().map(|r| (r.t, r.arm_id)).collect();
            assert_eq!(same, expect, "{algo:?} deviates from LinUCB when silent");
        }
    }

    #[test]
    fn mcr_picks_largest_radius_key_term() {
        let env = basis_env(0.0);
        let mut state = UcbState::new(2, 1.0, 1.0);
        // Load the second coordinate so e1 has the larger radius.
        for _ in 0..99 {
            state.update(env.keyterm_vector(1), 0.1);
        }
        let k = argmax_keyterm(&env, |v| state.conf_radius(v));
        assert_eq!(k, 0);
    }

    #[test]
    fn keyterm_query_counts_follow_schedule() {
        let env = basis_env(1.0);
        let horizon = 500;
        let log = run_baseline(
            &env,
            BaselineAlgo::ConUcb,
            ConversationSchedule::linear(50),
            2.0,
            1.0,
            horizon,
            4,
        )
        .unwrap();
        assert_eq!(log.keyterm_pulls, 10);
    }

    #[test]
    fn bs_queries_spread_over_spanner() {
        // Orthonormal key terms are their own spanner; over many fires each
        // element should be hit a fair share of the time.
        let env = basis_env(1.0);
        let spanner = barycentric_spanner(&env.key_terms, 2.0).unwrap();
        assert_eq!(spanner.len(), 2);
        let mut state = UcbState::new(2, 1.0, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut counts = [0u64; 2];
        let fires = 10_000;
        for _ in 0..fires {
            let q = conversation_query(
                BaselineAlgo::ConLinUcbBs,
                &mut state,
                &env,
                0,
                &spanner,
                &mut rng,
            )
            .unwrap()
            .unwrap();
            counts[q as usize] += 1;
        }
        for &c in &counts {
            let ratio = c as f64 / fires as f64;
            assert!((ratio - 0.5).abs() < 0.05, "spanner element frequency {ratio}");
        }
    }

    #[test]
    fn pooled_regression_matches_normal_equations() {
        // Replay an Arm-Con run's sample stream into the normal equations.
        let env = basis_env(1.0);
        let mut state = UcbState::new(2, 1.5, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let schedule = ConversationSchedule::log(5.0);
        let mut samples: Vec<(DVector<f64>, f64)> = Vec::new();
        for t in 1..=200u64 {
            for _ in 0..schedule.queries_at(t) {
                let arm = linucb_select(&state, &env, 0);
                let r = env.sample_arm_reward(0, arm, &mut rng).unwrap();
                state.update(env.arm_vector(arm), r);
                samples.push((env.arm_vector(arm).clone(), r));
            }
            let arm = linucb_select(&state, &env, 0);
            let r = env.sample_arm_reward(0, arm, &mut rng).unwrap();
            state.update(env.arm_vector(arm), r);
            samples.push((env.arm_vector(arm).clone(), r));
        }
        let mut g = SymMatrix::identity(2);
        let mut rhs = DVector::zeros(2);
        for (x, r) in &samples {
            g.add_scaled_outer(1.0, x);
            rhs.axpy(*r, x, 1.0);
        }
        let expect = crate::linalg::solve_linear_system(&g, &rhs).unwrap();
        assert!((&state.theta_hat - &expect).norm() < 1e-8);
    }
}
