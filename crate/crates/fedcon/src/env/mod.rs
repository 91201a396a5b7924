//! Ground-truth bandit environments and reward sampling.
//!
//! An [`Environment`] owns a global arm pool, a key-term set, the hidden
//! preference vector, and per-client arm subsets. Arm and key-term feature
//! vectors are unit norm and the preference vector has norm at most 1;
//! `validate` enforces rather than assumes this. Environments are immutable
//! after construction; reward sampling takes a caller-owned random source.

use nalgebra::DVector;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

mod feedback;
mod lower_bound;
mod synthetic;
mod textfmt;

pub use feedback::{ingest_feedback_matrix, read_feedback_csv, FeedbackMatrix, IngestResult};
pub use lower_bound::build_lowerbound_instance;
pub use synthetic::draw_spanning_subset as draw_spanning_arm_subset;
pub use synthetic::{assemble_environment, generate_synthetic, SyntheticConfig, SyntheticData};
pub use textfmt::{load_environment, save_environment};

pub const UNIT_NORM_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("arm {arm} is not in client {client}'s arm set")]
    UnknownArm { client: usize, arm: usize },
    #[error("unknown key term {0}")]
    UnknownKeyTerm(usize),
    #[error("key-term set is empty")]
    EmptyKeyTermSet,
    #[error("bad shape: {0}")]
    BadShape(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("environment violates an invariant: {0}")]
    Invariant(String),
    #[error("could not parse environment file: {0}")]
    BadFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub dim: usize,
    /// Global arm pool; every vector has unit norm.
    pub arms: Vec<DVector<f64>>,
    /// Key-term pool; every vector has unit norm.
    pub key_terms: Vec<DVector<f64>>,
    /// Per-client arm ids into `arms`, sorted ascending.
    pub clients: Vec<Vec<usize>>,
    /// Hidden preference vector, ‖θ*‖ ≤ 1. Arm- and key-term-level
    /// preferences are identical.
    pub theta_star: DVector<f64>,
    pub noise_std: f64,
}

impl Environment {
    /// Checks unit norms, the preference-vector bound, id ranges, and that
    /// every client's arms span the ambient space.
    pub fn validate(&self) -> Result<(), EnvError> {
        for (i, a) in self.arms.iter().enumerate() {
            if a.len() != self.dim {
                return Err(EnvError::BadShape(format!("arm {i} has dimension {}", a.len())));
            }
            if (a.norm() - 1.0).abs() > UNIT_NORM_TOL {
                return Err(EnvError::Invariant(format!("arm {i} norm {}", a.norm())));
            }
        }
        for (k, v) in self.key_terms.iter().enumerate() {
            if v.len() != self.dim {
                return Err(EnvError::BadShape(format!("key term {k} has dimension {}", v.len())));
            }
            if (v.norm() - 1.0).abs() > UNIT_NORM_TOL {
                return Err(EnvError::Invariant(format!("key term {k} norm {}", v.norm())));
            }
        }
        if self.theta_star.len() != self.dim {
            return Err(EnvError::BadShape("theta dimension mismatch".into()));
        }
        if self.theta_star.norm() > 1.0 + UNIT_NORM_TOL {
            return Err(EnvError::Invariant(format!("‖θ*‖ = {}", self.theta_star.norm())));
        }
        if self.noise_std < 0.0 {
            return Err(EnvError::BadConfig("negative noise level".into()));
        }
        for (c, ids) in self.clients.iter().enumerate() {
            if ids.iter().any(|&i| i >= self.arms.len()) {
                return Err(EnvError::BadShape(format!("client {c} references a missing arm")));
            }
            let vs: Vec<DVector<f64>> = ids.iter().map(|&i| self.arms[i].clone()).collect();
            let rank = crate::linalg::span_rank(&vs, self.dim);
            if rank < self.dim {
                return Err(EnvError::Invariant(format!(
                    "client {c} arms span only {rank} of {} dimensions",
                    self.dim
                )));
            }
        }
        Ok(())
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn client_arm_ids(&self, client: usize) -> &[usize] {
        &self.clients[client]
    }

    pub fn arm_vector(&self, arm_id: usize) -> &DVector<f64> {
        &self.arms[arm_id]
    }

    pub fn keyterm_vector(&self, keyterm_id: usize) -> &DVector<f64> {
        &self.key_terms[keyterm_id]
    }

    pub fn mean_arm_reward(&self, arm_id: usize) -> f64 {
        self.arms[arm_id].dot(&self.theta_star)
    }

    /// Highest expected reward over a client's arm set.
    pub fn best_value(&self, client: usize) -> f64 {
        self.clients[client]
            .iter()
            .map(|&i| self.mean_arm_reward(i))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Arm id attaining [`Self::best_value`], lowest id on ties.
    pub fn best_arm(&self, client: usize) -> usize {
        let mut best = self.clients[client][0];
        let mut best_val = self.mean_arm_reward(best);
        for &i in &self.clients[client] {
            let v = self.mean_arm_reward(i);
            if v > best_val {
                best_val = v;
                best = i;
            }
        }
        best
    }

    /// Samples `aᵀθ* + η` with η ~ N(0, noise_std²). Errors when the arm is
    /// not in the client's set.
    pub fn sample_arm_reward<R: Rng + ?Sized>(
        &self,
        client: usize,
        arm_id: usize,
        rng: &mut R,
    ) -> Result<f64, EnvError> {
        if client >= self.clients.len() || !self.clients[client].contains(&arm_id) {
            return Err(EnvError::UnknownArm { client, arm: arm_id });
        }
        Ok(self.mean_arm_reward(arm_id) + self.sample_noise(rng))
    }

    /// Samples `kᵀθ* + η̃`; key-term feedback shares the preference vector.
    pub fn sample_keyterm_reward<R: Rng + ?Sized>(
        &self,
        keyterm_id: usize,
        rng: &mut R,
    ) -> Result<f64, EnvError> {
        if keyterm_id >= self.key_terms.len() {
            return Err(EnvError::UnknownKeyTerm(keyterm_id));
        }
        Ok(self.key_terms[keyterm_id].dot(&self.theta_star) + self.sample_noise(rng))
    }

    fn sample_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.noise_std == 0.0 {
            return 0.0;
        }
        Normal::new(0.0, self.noise_std).expect("valid noise level").sample(rng)
    }
}

/// Estimates the key-term richness constant: the minimum over sampled unit
/// directions v of max_k |kᵀv|. Eigenvector signs are arbitrary, so matching
/// uses the absolute inner product. More probes can only lower the estimate.
pub fn estimate_richness_c<R: Rng + ?Sized>(
    key_terms: &[DVector<f64>],
    num_probe_directions: usize,
    rng: &mut R,
) -> Result<f64, EnvError> {
    if key_terms.is_empty() {
        return Err(EnvError::EmptyKeyTermSet);
    }
    if num_probe_directions == 0 {
        return Err(EnvError::BadConfig("at least one probe direction required".into()));
    }
    let d = key_terms[0].len();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut worst = f64::INFINITY;
    for _ in 0..num_probe_directions {
        let mut v = DVector::from_fn(d, |_, _| normal.sample(rng));
        let n = v.norm();
        if n < 1e-12 {
            continue;
        }
        v /= n;
        let best = key_terms.iter().map(|k| k.dot(&v).abs()).fold(0.0f64, f64::max);
        worst = worst.min(best);
    }
    Ok(worst)
}

/// Normalizes to unit length; zero vectors fall back to the first basis
/// direction so downstream invariants stay intact.
pub(crate) fn unit_or_basis(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    if n < 1e-12 {
        let mut e = DVector::zeros(v.len());
        e[0] = 1.0;
        e
    } else {
        v / n
    }
}

/// Scales the preference vector back into the unit ball, preserving its
/// direction, when generation produced a longer vector.
pub fn clamp_to_unit_ball(v: DVector<f64>) -> DVector<f64> {
    let n = v.norm();
    if n > 1.0 {
        v / n
    } else {
        v
    }
}
