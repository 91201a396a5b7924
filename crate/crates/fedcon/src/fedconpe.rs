//! Phase-elimination client and server state machines.
//!
//! Each phase ℓ (with ε_ℓ = 2^{-ℓ}) a client computes a G-optimal design on
//! its active arms, uploads the eigenpairs of the design's information matrix
//! that fall below the certainty threshold s_ℓ, receives matching key terms
//! with repetition counts, plays out the arm and key-term schedule, uploads
//! its aggregated Gram/moment data, and eliminates arms whose estimated gap
//! exceeds 2√(N/M)·ε_ℓ under the server's pooled estimate θ̂ = G⁻¹W.
//!
//! When the active arms stop spanning the full space, design and eigen logic
//! run in an orthonormal basis of their span and the reduced dimension r
//! replaces d inside s_ℓ and the pull-count formulas; uploaded eigenvectors
//! are lifted back to full coordinates.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::env::{EnvError, Environment};
use crate::linalg::{
    self, spectral_decompose, DesignDistribution, EigenPair, LinalgError, SymMatrix,
};
use crate::protocol::{ClientUpload, KeyTermAssignment, ServerDownlink};

#[derive(Debug, Error)]
pub enum FedError {
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },
    #[error("key-term set is empty")]
    EmptyKeyTermSet,
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

/// Algorithm parameters shared by clients and server.
#[derive(Debug, Clone)]
pub struct AlgoConfig {
    /// Time horizon T.
    pub horizon: u64,
    /// Number of clients M.
    pub num_clients: usize,
    /// Ambient dimension d.
    pub dim: usize,
    /// Arm-set size K per client.
    pub arms_per_client: usize,
    /// Confidence level δ ∈ (0, 1).
    pub delta: f64,
    /// Exploration constant N > 0.
    pub n_const: f64,
    /// Key-term richness constant C ∈ (0, 1].
    pub richness_c: f64,
    /// Frank-Wolfe tolerance for the per-phase design.
    pub design_tol: f64,
    pub design_max_iter: usize,
}

/// Default N given C: caps the conversation fraction at a constant while the
/// elimination radius stays O(√(1/M)) when the key-term set is rich.
pub fn default_n_const(richness_c: f64) -> f64 {
    (1.0 / (richness_c * richness_c)).max(1.0)
}

impl AlgoConfig {
    pub fn validate(&self) -> Result<(), FedError> {
        if self.horizon < 2 {
            return Err(FedError::BadConfig("horizon must be at least 2".into()));
        }
        if self.num_clients == 0 || self.dim == 0 || self.arms_per_client == 0 {
            return Err(FedError::BadConfig("counts must be positive".into()));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(FedError::BadConfig("delta must lie in (0, 1)".into()));
        }
        if self.n_const <= 0.0 {
            return Err(FedError::BadConfig("N must be positive".into()));
        }
        if !(self.richness_c > 0.0 && self.richness_c <= 1.0) {
            return Err(FedError::BadConfig("C must lie in (0, 1]".into()));
        }
        if self.design_tol <= 0.0 {
            return Err(FedError::BadConfig("design tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn epsilon(phase: usize) -> f64 {
        0.5f64.powi(phase as i32)
    }

    /// ln(2KM·lnT/δ), shared by the arm and key-term pull counts.
    pub fn log_term(&self) -> f64 {
        let inner = 2.0 * self.arms_per_client as f64 * self.num_clients as f64
            * (self.horizon as f64).ln()
            / self.delta;
        inner.ln()
    }

    /// Eigenvalue certainty threshold s_ℓ = 3 / (4(1-ε_ℓ²)·r·N), with the
    /// effective dimension r in place of d for reduced-rank phases.
    pub fn eigen_threshold(&self, eff_dim: usize, phase: usize) -> f64 {
        let eps = Self::epsilon(phase);
        3.0 / (4.0 * (1.0 - eps * eps) * eff_dim as f64 * self.n_const)
    }

    /// Elimination radius 2√(N/M)·ε_ℓ.
    pub fn elimination_radius(&self, phase: usize) -> f64 {
        2.0 * (self.n_const / self.num_clients as f64).sqrt() * Self::epsilon(phase)
    }
}

/// Per-client state: the full arm set, the surviving active subset, and the
/// phase counter.
#[derive(Debug, Clone)]
pub struct ClientState {
    pub id: usize,
    pub arm_ids: Vec<usize>,
    pub active: Vec<usize>,
    pub phase: usize,
}

impl ClientState {
    pub fn new(id: usize, arm_ids: Vec<usize>) -> Self {
        let active = arm_ids.clone();
        Self { id, arm_ids, active, phase: 1 }
    }
}

/// Server state: running sums over all phases and clients.
#[derive(Debug, Clone)]
pub struct ServerState {
    pub gram: SymMatrix,
    pub moment: DVector<f64>,
    pub theta_hat: Option<DVector<f64>>,
    pub phase: usize,
}

impl ServerState {
    pub fn new(dim: usize) -> Self {
        Self { gram: SymMatrix::zeros(dim), moment: DVector::zeros(dim), theta_hat: None, phase: 1 }
    }
}

/// Everything a client derives at the start of a phase before playing.
#[derive(Debug, Clone)]
pub struct PhasePrep {
    /// Design weights, one per active arm (simplex).
    pub design_weights: Vec<f64>,
    /// Orthonormal basis of the active arms' span, d × r.
    pub basis: DMatrix<f64>,
    /// Effective dimension r = rank of the active span.
    pub eff_dim: usize,
    /// Information matrix of the design in reduced coordinates.
    pub v_reduced: SymMatrix,
    /// λ_min of the information matrix.
    pub beta: f64,
    /// Threshold s_ℓ evaluated at the effective dimension.
    pub threshold: f64,
    /// Deficient eigenpairs in reduced coordinates, values ascending.
    pub deficient_reduced: Vec<EigenPair>,
    /// The same pairs with eigenvectors lifted to full coordinates; this is
    /// what goes on the wire.
    pub deficient_lifted: Vec<EigenPair>,
    /// (arm id, pull count) for every design-support arm.
    pub arm_counts: Vec<(usize, u64)>,
    pub singleton: bool,
}

impl PhasePrep {
    pub fn planned_rounds(&self) -> u64 {
        self.arm_counts.iter().map(|(_, c)| *c).sum()
    }

    pub fn support_size(&self) -> usize {
        self.arm_counts.len()
    }
}

/// Pull counts T_{i,ℓ}(a) = ⌈2·r·π(a)/ε_ℓ² · ln(2KM·lnT/δ)⌉ for the design's
/// support arms.
pub fn compute_phase_plan_arms(
    weights: &[f64],
    arm_ids: &[usize],
    eff_dim: usize,
    cfg: &AlgoConfig,
    phase: usize,
) -> Vec<(usize, u64)> {
    let eps = AlgoConfig::epsilon(phase);
    let log_term = cfg.log_term();
    let mut counts = Vec::new();
    for (&w, &id) in weights.iter().zip(arm_ids) {
        if w <= 0.0 {
            continue;
        }
        let t = (2.0 * eff_dim as f64 * w / (eps * eps) * log_term).ceil() as u64;
        if t > 0 {
            counts.push((id, t));
        }
    }
    counts
}

/// Eigenpairs of `v` whose eigenvalue falls below the phase threshold,
/// ascending by value. The effective dimension is taken from the matrix.
pub fn deficient_directions(
    v: &SymMatrix,
    cfg: &AlgoConfig,
    phase: usize,
) -> Result<Vec<EigenPair>, FedError> {
    let threshold = cfg.eigen_threshold(v.dim(), phase);
    let mut pairs = spectral_decompose(v)?;
    pairs.retain(|p| p.value < threshold);
    pairs.reverse();
    Ok(pairs)
}

/// Computes the design, eigen analysis, and arm plan for one phase.
///
/// Singleton active sets skip design and conversations entirely and just pull
/// the lone arm for the point-mass phase length.
pub fn client_prepare_phase(
    client: &ClientState,
    env: &Environment,
    cfg: &AlgoConfig,
) -> Result<PhasePrep, FedError> {
    let phase = client.phase;
    let actives: Vec<DVector<f64>> =
        client.active.iter().map(|&id| env.arm_vector(id).clone()).collect();
    assert!(!actives.is_empty(), "active arm set must stay nonempty");

    if actives.len() == 1 {
        let basis = DMatrix::from_fn(env.dim, 1, |i, _| actives[0][i]);
        let v_reduced = SymMatrix::identity(1);
        let arm_counts =
            compute_phase_plan_arms(&[1.0], &client.active, 1, cfg, phase);
        return Ok(PhasePrep {
            design_weights: vec![1.0],
            basis,
            eff_dim: 1,
            v_reduced,
            beta: 1.0,
            threshold: cfg.eigen_threshold(1, phase),
            deficient_reduced: Vec::new(),
            deficient_lifted: Vec::new(),
            arm_counts,
            singleton: true,
        });
    }

    let basis = linalg::span_basis(&actives);
    let eff_dim = basis.ncols();
    let reduced: Vec<DVector<f64>> =
        actives.iter().map(|a| basis.transpose() * a).collect();
    let design: DesignDistribution =
        linalg::g_optimal_design(&reduced, cfg.design_tol, cfg.design_max_iter)?;

    let threshold = cfg.eigen_threshold(eff_dim, phase);
    let pairs = spectral_decompose(&design.info_matrix)?;
    let beta = pairs.last().map(|p| p.value).unwrap_or(0.0);
    let mut deficient_reduced: Vec<EigenPair> =
        pairs.into_iter().filter(|p| p.value < threshold).collect();
    deficient_reduced.reverse();
    let deficient_lifted: Vec<EigenPair> = deficient_reduced
        .iter()
        .map(|p| EigenPair { value: p.value, vector: &basis * &p.vector })
        .collect();

    let arm_counts =
        compute_phase_plan_arms(&design.weights, &client.active, eff_dim, cfg, phase);
    Ok(PhasePrep {
        design_weights: design.weights,
        basis,
        eff_dim,
        v_reduced: design.info_matrix,
        beta,
        threshold,
        deficient_reduced,
        deficient_lifted,
        arm_counts,
        singleton: false,
    })
}

/// Server side of the conversation setup: matches each uploaded eigenpair to
/// the key term with the largest |kᵀv| and computes its repetition count
/// n_k = ⌈(3/(2(1-ε²)N) - 2rλ) / (C²ε²) · ln(2KM·lnT/δ)⌉.
///
/// Matching uses the absolute inner product since eigenvector signs are
/// arbitrary and the augmentation only ever consumes k kᵀ.
pub fn server_select_keyterms(
    eigenpairs: &[EigenPair],
    key_terms: &[DVector<f64>],
    cfg: &AlgoConfig,
    phase: usize,
    eff_dim: usize,
) -> Result<Vec<KeyTermAssignment>, FedError> {
    if key_terms.is_empty() {
        return Err(FedError::EmptyKeyTermSet);
    }
    let eps = AlgoConfig::epsilon(phase);
    let log_term = cfg.log_term();
    let c2 = cfg.richness_c * cfg.richness_c;
    let lead = 3.0 / (2.0 * (1.0 - eps * eps) * cfg.n_const);
    let mut out = Vec::with_capacity(eigenpairs.len());
    for pair in eigenpairs {
        let mut best = 0usize;
        let mut best_dot = f64::NEG_INFINITY;
        for (k, v) in key_terms.iter().enumerate() {
            let dot = v.dot(&pair.vector).abs();
            if dot > best_dot {
                best_dot = dot;
                best = k;
            }
        }
        let raw = (lead - 2.0 * eff_dim as f64 * pair.value) / (c2 * eps * eps) * log_term;
        let count = raw.ceil().max(0.0) as u64;
        out.push(KeyTermAssignment {
            keyterm_id: best,
            vector: key_terms[best].clone(),
            eigenvalue: pair.value,
            count,
        });
    }
    Ok(out)
}

/// Folds the phase uploads into the server's running G and W.
pub fn aggregate(server: &mut ServerState, uploads: &[&ClientUpload]) -> Result<(), FedError> {
    let d = server.gram.dim();
    for up in uploads {
        if up.gram.dim() != d || up.moment.len() != d {
            return Err(FedError::DimMismatch { expected: d, got: up.gram.dim() });
        }
        server.gram.add(&up.gram);
        server.moment += &up.moment;
    }
    Ok(())
}

/// θ̂ = G⁻¹W; fails while G is singular (before the first spanning phase).
pub fn estimate_theta(server: &ServerState) -> Result<DVector<f64>, FedError> {
    Ok(linalg::solve_linear_system(&server.gram, &server.moment)?)
}

/// Keeps arm a iff max_b ⟨θ̂, b-a⟩ ≤ 2√(N/M)·ε_ℓ over the active set. The
/// empirical argmax always survives, so the result is never empty.
pub fn eliminate_arms(
    active: &[usize],
    env: &Environment,
    theta_hat: &DVector<f64>,
    cfg: &AlgoConfig,
    phase: usize,
) -> Vec<usize> {
    let radius = cfg.elimination_radius(phase);
    let values: Vec<f64> =
        active.iter().map(|&id| env.arm_vector(id).dot(theta_hat)).collect();
    let best = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    active
        .iter()
        .zip(&values)
        .filter(|(_, &v)| best - v <= radius)
        .map(|(&id, _)| id)
        .collect()
}

/// One executed round: the arm pulled plus any key-term queries that rode on
/// it (more than one only under an overflow flag).
#[derive(Debug, Clone)]
pub struct RoundAction {
    pub arm_id: usize,
    pub keyterms: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct ClientPhaseResult {
    /// `None` when the horizon truncated the plan; partial data is not
    /// uploaded and no elimination happens.
    pub upload: Option<ClientUpload>,
    pub rounds: Vec<RoundAction>,
    pub filler_pulls: u64,
    pub keyterm_pulls: u64,
    pub keyterm_demand: u64,
    pub overflow: bool,
}

/// Plays out one phase for a client: every support arm for its planned count,
/// every assigned key term for its repetition count (interleaved uniformly
/// across the rounds, at most one per round unless demand overflows), plus
/// best-empirical-arm filler to keep the client in lockstep with slower
/// peers. Returns the Alg-line-13 upload built from the planned counts and
/// observed rewards; filler rewards are discarded for estimation.
pub fn client_run_phase<R: rand::Rng + ?Sized>(
    client: &ClientState,
    prep: &PhasePrep,
    downlink: &ServerDownlink,
    env: &Environment,
    rng: &mut R,
    rounds_to_play: u64,
) -> Result<ClientPhaseResult, FedError> {
    let plan_len = prep.planned_rounds();
    let truncated = rounds_to_play < plan_len;

    // Arm schedule: support arms in id order, each repeated its count.
    let mut arm_schedule: Vec<usize> = Vec::with_capacity(plan_len as usize);
    for &(id, count) in &prep.arm_counts {
        arm_schedule.extend(std::iter::repeat_n(id, count as usize));
    }

    // Key-term queue with uniform target positions over the plan.
    let demand: u64 = downlink.assignments.iter().map(|a| a.count).sum();
    let mut queue: Vec<(u64, usize)> = Vec::with_capacity(demand as usize);
    {
        let mut q = 0u64;
        for a in &downlink.assignments {
            for _ in 0..a.count {
                let target = if demand == 0 { 0 } else { q * plan_len / demand };
                queue.push((target, a.keyterm_id));
                q += 1;
            }
        }
        queue.sort_by_key(|&(pos, _)| pos);
    }
    let overflow = demand > rounds_to_play;

    let mut rounds = Vec::with_capacity(rounds_to_play as usize);
    let mut moment = DVector::zeros(env.dim);
    let mut reward_sum: std::collections::BTreeMap<usize, (f64, u64)> = Default::default();
    let mut filler_arm: Option<usize> = None;
    let mut filler_pulls = 0u64;
    let mut keyterm_pulls = 0u64;
    let mut next_query = 0usize;

    for r in 0..rounds_to_play {
        let arm_id = if (r as usize) < arm_schedule.len() {
            arm_schedule[r as usize]
        } else {
            *filler_arm.get_or_insert_with(|| best_observed_arm(&reward_sum, &client.active))
        };
        let reward = env.sample_arm_reward(client.id, arm_id, rng)?;
        let in_plan = (r as usize) < arm_schedule.len();
        if in_plan {
            moment.axpy(reward, env.arm_vector(arm_id), 1.0);
            let e = reward_sum.entry(arm_id).or_insert((0.0, 0));
            e.0 += reward;
            e.1 += 1;
        } else {
            filler_pulls += 1;
        }

        let mut keyterms = Vec::new();
        if next_query < queue.len() && queue[next_query].0 <= r {
            let kt = queue[next_query].1;
            next_query += 1;
            let feedback = env.sample_keyterm_reward(kt, rng)?;
            moment.axpy(feedback, env.keyterm_vector(kt), 1.0);
            keyterm_pulls += 1;
            keyterms.push(kt);
        }
        // Overflowing demand is flushed in the final round; the one-per-round
        // cap is already flagged at that point.
        if !truncated && r + 1 == rounds_to_play {
            while next_query < queue.len() {
                let kt = queue[next_query].1;
                next_query += 1;
                let feedback = env.sample_keyterm_reward(kt, rng)?;
                moment.axpy(feedback, env.keyterm_vector(kt), 1.0);
                keyterm_pulls += 1;
                keyterms.push(kt);
            }
        }
        rounds.push(RoundAction { arm_id, keyterms });
    }

    let upload = if truncated {
        None
    } else {
        let mut gram = SymMatrix::zeros(env.dim);
        for &(id, count) in &prep.arm_counts {
            gram.add_scaled_outer(count as f64, env.arm_vector(id));
        }
        for a in &downlink.assignments {
            gram.add_scaled_outer(a.count as f64, &a.vector);
        }
        Some(ClientUpload {
            phase: client.phase,
            eigenpairs: prep.deficient_lifted.clone(),
            gram,
            moment,
        })
    };

    Ok(ClientPhaseResult {
        upload,
        rounds,
        filler_pulls,
        keyterm_pulls,
        keyterm_demand: demand,
        overflow,
    })
}

fn best_observed_arm(
    reward_sum: &std::collections::BTreeMap<usize, (f64, u64)>,
    active: &[usize],
) -> usize {
    let mut best = active[0];
    let mut best_mean = f64::NEG_INFINITY;
    for (&id, &(sum, count)) in reward_sum {
        let mean = sum / count as f64;
        if mean > best_mean {
            best_mean = mean;
            best = id;
        }
    }
    best
}

/// Checks the eigenvalue augmentation bound for one phase:
/// λ_min(V + Σ ((s_ℓ-λ)/C²)·kkᵀ) ≥ s_ℓ, in the reduced coordinates, PROVIDED
/// every matched key term has |kᵀv_j| ≥ C. Returns the achieved minimum and
/// whether the proviso held; a violated proviso flags the key-term set rather
/// than the algorithm.
pub fn eigenvalue_lemma_check(
    prep: &PhasePrep,
    assignments: &[KeyTermAssignment],
    cfg: &AlgoConfig,
) -> Result<(f64, bool), FedError> {
    let c2 = cfg.richness_c * cfg.richness_c;
    let mut augmented = prep.v_reduced.clone();
    let mut proviso_ok = true;
    for (assign, pair) in assignments.iter().zip(&prep.deficient_lifted) {
        let alignment = assign.vector.dot(&pair.vector).abs();
        if alignment < cfg.richness_c - 1e-12 {
            proviso_ok = false;
        }
        let weight = (prep.threshold - assign.eigenvalue) / c2;
        let k_reduced = prep.basis.transpose() * &assign.vector;
        augmented.add_scaled_outer(weight, &k_reduced);
    }
    let pairs = spectral_decompose(&augmented)?;
    let lambda_min = pairs.last().map(|p| p.value).unwrap_or(0.0);
    Ok((lambda_min, proviso_ok))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn test_cfg() -> AlgoConfig {
        AlgoConfig {
            horizon: 1024,
            num_clients: 2,
            dim: 2,
            arms_per_client: 10,
            delta: 0.1,
            n_const: 1.0,
            richness_c: 1.0,
            design_tol: 1e-2,
            design_max_iter: 10_000,
        }
    }

    fn unit2(x: f64, y: f64) -> DVector<f64> {
        let v = DVector::from_vec(vec![x, y]);
        let n = v.norm();
        v / n
    }

    #[test]
    fn phase_plan_matches_formula() {
        // ε = 1/2, ln(2·10·2·ln 1024 / 0.1) ≈ 7.928 → ⌈8·7.928⌉ = 64 per arm.
        let cfg = test_cfg();
        let counts = compute_phase_plan_arms(&[0.5, 0.5], &[0, 1], 2, &cfg, 1);
        assert_eq!(counts, vec![(0, 64), (1, 64)]);
    }

    #[test]
    fn zero_weight_contributes_zero_pulls() {
        let cfg = test_cfg();
        let counts = compute_phase_plan_arms(&[1.0, 0.0], &[0, 1], 2, &cfg, 1);
        assert_eq!(counts, vec![(0, 127)]);
    }

    #[test]
    fn total_pulls_dominate_phase_lower_bound() {
        let cfg = test_cfg();
        for phase in 1..=4 {
            let counts = compute_phase_plan_arms(&[0.3, 0.3, 0.4], &[0, 1, 2], 2, &cfg, phase);
            let total: u64 = counts.iter().map(|(_, c)| c).sum();
            let eps = AlgoConfig::epsilon(phase);
            let floor = 2.0 * 2.0 / (eps * eps) * cfg.log_term();
            assert!(total as f64 >= floor);
        }
    }

    #[test]
    fn deficient_threshold_arithmetic() {
        let cfg = AlgoConfig { dim: 2, ..test_cfg() };
        // s_1 = 3/(4·0.75·2·1) = 0.5: identity has no deficient directions.
        assert_abs_diff_eq!(cfg.eigen_threshold(2, 1), 0.5, epsilon = 1e-12);
        let v = SymMatrix::identity(2);
        assert!(deficient_directions(&v, &cfg, 1).unwrap().is_empty());
        // diag(0.1, 1.0) has exactly one, along e1.
        let v = SymMatrix::from_diagonal(&[0.1, 1.0]);
        let def = deficient_directions(&v, &cfg, 1).unwrap();
        assert_eq!(def.len(), 1);
        assert_abs_diff_eq!(def[0].value, 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(def[0].vector[0].abs(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn deficient_set_matches_independent_recomputation() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(12);
        let cfg = AlgoConfig { dim: 4, ..test_cfg() };
        for _ in 0..20 {
            let diag: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..0.6f64)).collect();
            let v = SymMatrix::from_diagonal(&diag);
            let def = deficient_directions(&v, &cfg, 2).unwrap();
            let s = cfg.eigen_threshold(4, 2);
            let expect: Vec<f64> = {
                let mut vals: Vec<f64> =
                    spectral_decompose(&v).unwrap().iter().map(|p| p.value).collect();
                vals.retain(|&x| x < s);
                vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
                vals
            };
            let got: Vec<f64> = def.iter().map(|p| p.value).collect();
            assert_eq!(got.len(), expect.len());
            for (g, e) in got.iter().zip(&expect) {
                assert_abs_diff_eq!(*g, *e, epsilon = 1e-12);
            }
            // Ascending order.
            for w in got.windows(2) {
                assert!(w[0] <= w[1]);
            }
        }
    }

    #[test]
    fn keyterm_count_formula() {
        // λ=0, d=2, ℓ=1, N=1, C=1: n = ⌈(2/0.25)·7.928⌉ = 64.
        let cfg = test_cfg();
        let pair = EigenPair { value: 0.0, vector: unit2(1.0, 0.0) };
        let key_terms = vec![unit2(1.0, 0.0), unit2(0.0, 1.0)];
        let out = server_select_keyterms(&[pair], &key_terms, &cfg, 1, 2).unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out[0].keyterm_id, 0);
        assert_eq!(out[0].count, 64);
    }

    #[test]
    fn keyterm_selection_edge_cases() {
        let cfg = test_cfg();
        let key_terms = vec![unit2(1.0, 0.0), unit2(0.0, 1.0)];
        assert!(server_select_keyterms(&[], &key_terms, &cfg, 1, 2).unwrap().is_empty());
        let pair = EigenPair { value: 0.1, vector: unit2(1.0, 0.0) };
        assert!(matches!(
            server_select_keyterms(&[pair], &[], &cfg, 1, 2),
            Err(FedError::EmptyKeyTermSet)
        ));
        // Matching ignores sign.
        let pair = EigenPair { value: 0.1, vector: unit2(-1.0, 0.0) };
        let out = server_select_keyterms(&[pair], &key_terms, &cfg, 1, 2).unwrap();
        assert_eq!(out[0].keyterm_id, 0);
    }

    #[test]
    fn aggregation_is_additive_and_retains_history() {
        let mut server = ServerState::new(2);
        let up1 = ClientUpload {
            phase: 1,
            eigenpairs: Vec::new(),
            gram: SymMatrix::identity(2),
            moment: DVector::from_vec(vec![1.0, 0.0]),
        };
        let mut g2 = SymMatrix::identity(2);
        g2.scale(2.0);
        let up2 = ClientUpload {
            phase: 1,
            eigenpairs: Vec::new(),
            gram: g2,
            moment: DVector::from_vec(vec![0.0, 1.0]),
        };
        aggregate(&mut server, &[&up1, &up2]).unwrap();
        assert_abs_diff_eq!(server.gram.get(0, 0), 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(server.moment[0], 1.0, epsilon = 1e-12);
        // Phase 2 adds on top.
        aggregate(&mut server, &[&up1]).unwrap();
        assert_abs_diff_eq!(server.gram.get(0, 0), 4.0, epsilon = 1e-12);
        assert_abs_diff_eq!(server.moment[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn estimate_requires_nonsingular_gram() {
        let server = ServerState::new(3);
        assert!(matches!(
            estimate_theta(&server),
            Err(FedError::Linalg(LinalgError::Singular))
        ));
    }

    #[test]
    fn noiseless_estimate_recovers_theta() {
        let mut server = ServerState::new(2);
        let theta = DVector::from_vec(vec![0.7, -0.2]);
        let mut gram = SymMatrix::zeros(2);
        let mut moment = DVector::zeros(2);
        for (arm, count) in [(unit2(1.0, 0.0), 3.0), (unit2(0.3, 0.9), 5.0)] {
            gram.add_scaled_outer(count, &arm);
            moment.axpy(count * arm.dot(&theta), &arm, 1.0);
        }
        server.gram = gram;
        server.moment = moment;
        let est = estimate_theta(&server).unwrap();
        assert!((est - theta).norm() < 1e-8);
    }

    #[test]
    fn elimination_rule() {
        let env = Environment {
            dim: 2,
            arms: vec![unit2(1.0, 0.0), unit2(0.0, 1.0)],
            key_terms: vec![unit2(1.0, 0.0)],
            clients: vec![vec![0, 1]],
            theta_star: DVector::from_vec(vec![1.0, 0.0]),
            noise_std: 0.0,
        };
        // Values {1.0, 0.2} under θ̂ = (1.0, 0.2); N=1, M=4, ℓ=2 → radius
        // 2·(1/2)·(1/4) = 0.25, so the 0.8 gap eliminates the second arm.
        let cfg = AlgoConfig { num_clients: 4, ..test_cfg() };
        let theta_hat = DVector::from_vec(vec![1.0, 0.2]);
        assert_abs_diff_eq!(cfg.elimination_radius(2), 0.25, epsilon = 1e-12);
        let kept = eliminate_arms(&[0, 1], &env, &theta_hat, &cfg, 2);
        assert_eq!(kept, vec![0]);
        // Equal values: nothing eliminated.
        let flat = DVector::from_vec(vec![0.0, 0.0]);
        assert_eq!(eliminate_arms(&[0, 1], &env, &flat, &cfg, 2), vec![0, 1]);
    }

    #[test]
    fn lemma_check_with_exact_key_terms() {
        // Deficient direction e1 with λ = 0.1 < s_1 = 0.5; exact-aligned key
        // term lifts λ_min to the threshold.
        let cfg = test_cfg();
        let env_basis = DMatrix::identity(2, 2);
        let prep = PhasePrep {
            design_weights: vec![1.0],
            basis: env_basis,
            eff_dim: 2,
            v_reduced: SymMatrix::from_diagonal(&[0.1, 0.9]),
            beta: 0.1,
            threshold: cfg.eigen_threshold(2, 1),
            deficient_reduced: vec![EigenPair { value: 0.1, vector: unit2(1.0, 0.0) }],
            deficient_lifted: vec![EigenPair { value: 0.1, vector: unit2(1.0, 0.0) }],
            arm_counts: vec![(0, 1)],
            singleton: false,
        };
        let assignments = vec![KeyTermAssignment {
            keyterm_id: 0,
            vector: unit2(1.0, 0.0),
            eigenvalue: 0.1,
            count: 10,
        }];
        let (lmin, proviso) = eigenvalue_lemma_check(&prep, &assignments, &cfg).unwrap();
        assert!(proviso);
        assert!(lmin >= prep.threshold - 1e-9, "λ_min {lmin} below {}", prep.threshold);
    }
}
