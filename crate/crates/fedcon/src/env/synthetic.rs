//! Synthetic data generation.
//!
//! Key terms and arms are linked through a relation graph: each arm draws a
//! handful of key-term indices, its feature vector is sampled around the mean
//! of their pseudo-features, and each key term's feature vector is the
//! weight-normalized combination of its related arms. Feature vectors are
//! normalized to unit length afterwards and user preference vectors are
//! clamped into the unit ball, so generated data always satisfies the model
//! assumptions while preserving directions.

use nalgebra::DVector;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{clamp_to_unit_ball, unit_or_basis, EnvError, Environment};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub d: usize,
    pub num_users: usize,
    pub num_arms: usize,
    pub num_keyterms: usize,
    /// Upper bound on the number of key terms related to one arm.
    pub relation_max: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self { d: 50, num_users: 200, num_arms: 5000, num_keyterms: 1000, relation_max: 5, seed: 0 }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), EnvError> {
        if self.d == 0 || self.num_users == 0 || self.num_arms == 0 || self.num_keyterms == 0 {
            return Err(EnvError::BadConfig("all counts must be positive".into()));
        }
        if self.relation_max == 0 {
            return Err(EnvError::BadConfig("relation_max must be positive".into()));
        }
        if self.num_arms < self.d {
            return Err(EnvError::BadConfig(format!(
                "need at least d = {} arms, got {}",
                self.d, self.num_arms
            )));
        }
        Ok(())
    }
}

/// Generated pool: arms, key terms, users, and the arm → key-term relation
/// graph. Raw (pre-normalization) vectors are retained so the generation
/// formulas stay checkable after the fact.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub cfg: SyntheticConfig,
    /// Unit-norm arm features.
    pub arms: Vec<DVector<f64>>,
    /// Unit-norm key-term features.
    pub key_terms: Vec<DVector<f64>>,
    /// User preference vectors, clamped to the unit ball.
    pub users: Vec<DVector<f64>>,
    /// relations[i] = key-term ids related to arm i (each with weight 1/n_i).
    pub relations: Vec<Vec<usize>>,
    pub raw_arms: Vec<DVector<f64>>,
    pub raw_key_terms: Vec<DVector<f64>>,
    /// Pseudo-features the arms were seeded from.
    pub pseudo_features: Vec<DVector<f64>>,
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticData, EnvError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.d;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let pseudo_features: Vec<DVector<f64>> = (0..cfg.num_keyterms)
        .map(|_| DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0)))
        .collect();

    let mut relations = Vec::with_capacity(cfg.num_arms);
    let mut raw_arms = Vec::with_capacity(cfg.num_arms);
    for _ in 0..cfg.num_arms {
        let n_i = rng.random_range(1..=cfg.relation_max.min(cfg.num_keyterms));
        let mut related: Vec<usize> =
            sample_indices(&mut rng, cfg.num_keyterms, n_i).into_iter().collect();
        related.sort_unstable();
        let mut mean = DVector::zeros(d);
        for &k in &related {
            mean += &pseudo_features[k];
        }
        mean /= n_i as f64;
        let arm = DVector::from_fn(d, |j, _| mean[j] + normal.sample(&mut rng));
        relations.push(related);
        raw_arms.push(arm);
    }

    // Key term k = Σ_i (w_{i,k} / Σ_j w_{j,k}) a_i over related arms, with
    // w_{i,k} = 1/n_i. Key terms no arm selected fall back to their
    // pseudo-feature so the pool size stays fixed.
    let mut weight_sums = vec![0.0f64; cfg.num_keyterms];
    for (related, _) in relations.iter().zip(&raw_arms) {
        for &k in related {
            weight_sums[k] += 1.0 / related.len() as f64;
        }
    }
    let mut raw_key_terms: Vec<DVector<f64>> = (0..cfg.num_keyterms)
        .map(|k| {
            if weight_sums[k] > 0.0 {
                DVector::zeros(d)
            } else {
                pseudo_features[k].clone()
            }
        })
        .collect();
    for (related, arm) in relations.iter().zip(&raw_arms) {
        let w = 1.0 / related.len() as f64;
        for &k in related {
            raw_key_terms[k].axpy(w / weight_sums[k], arm, 1.0);
        }
    }

    let users: Vec<DVector<f64>> = (0..cfg.num_users)
        .map(|_| clamp_to_unit_ball(DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0))))
        .collect();

    let arms = raw_arms.iter().map(|a| unit_or_basis(a.clone())).collect();
    let key_terms = raw_key_terms.iter().map(|k| unit_or_basis(k.clone())).collect();

    Ok(SyntheticData {
        cfg: cfg.clone(),
        arms,
        key_terms,
        users,
        relations,
        raw_arms,
        raw_key_terms,
        pseudo_features,
    })
}

/// Assembles a runnable environment from a generated pool: one arm subset of
/// size `arms_per_client` per client, drawn uniformly without replacement and
/// redrawn until it spans the feature space.
pub fn assemble_environment<R: Rng + ?Sized>(
    data: &SyntheticData,
    num_clients: usize,
    arms_per_client: usize,
    user_index: usize,
    noise_std: f64,
    rng: &mut R,
) -> Result<Environment, EnvError> {
    if num_clients == 0 {
        return Err(EnvError::BadConfig("need at least one client".into()));
    }
    if arms_per_client < data.cfg.d || arms_per_client > data.arms.len() {
        return Err(EnvError::BadConfig(format!(
            "arms per client must lie in [{}, {}], got {arms_per_client}",
            data.cfg.d,
            data.arms.len()
        )));
    }
    if user_index >= data.users.len() {
        return Err(EnvError::BadConfig(format!("user index {user_index} out of range")));
    }
    let mut clients = Vec::with_capacity(num_clients);
    for _ in 0..num_clients {
        clients.push(draw_spanning_subset(&data.arms, arms_per_client, data.cfg.d, rng)?);
    }
    let env = Environment {
        dim: data.cfg.d,
        arms: data.arms.clone(),
        key_terms: data.key_terms.clone(),
        clients,
        theta_star: data.users[user_index].clone(),
        noise_std,
    };
    env.validate()?;
    Ok(env)
}

pub fn draw_spanning_subset<R: Rng + ?Sized>(
    pool: &[DVector<f64>],
    count: usize,
    dim: usize,
    rng: &mut R,
) -> Result<Vec<usize>, EnvError> {
    const MAX_DRAWS: usize = 1000;
    for _ in 0..MAX_DRAWS {
        let mut ids: Vec<usize> = sample_indices(rng, pool.len(), count).into_iter().collect();
        ids.sort_unstable();
        let vs: Vec<DVector<f64>> = ids.iter().map(|&i| pool[i].clone()).collect();
        if crate::linalg::span_rank(&vs, dim) == dim {
            return Ok(ids);
        }
    }
    Err(EnvError::Invariant("could not draw a spanning arm subset".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small_cfg() -> SyntheticConfig {
        SyntheticConfig {
            d: 6,
            num_users: 8,
            num_arms: 60,
            num_keyterms: 20,
            relation_max: 5,
            seed: 42,
        }
    }

    #[test]
    fn default_dimensions_match_recipe() {
        let cfg = SyntheticConfig::default();
        assert_eq!(
            (cfg.d, cfg.num_users, cfg.num_arms, cfg.num_keyterms),
            (50, 200, 5000, 1000)
        );
    }

    #[test]
    fn per_arm_relation_weights_sum_to_one() {
        let data = generate_synthetic(&small_cfg()).unwrap();
        for related in &data.relations {
            assert!(!related.is_empty() && related.len() <= 5);
            let total: f64 = related.iter().map(|_| 1.0 / related.len() as f64).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn key_terms_recompute_from_relation_graph() {
        let data = generate_synthetic(&small_cfg()).unwrap();
        let k_count = data.cfg.num_keyterms;
        let mut weight_sums = vec![0.0f64; k_count];
        for related in &data.relations {
            for &k in related {
                weight_sums[k] += 1.0 / related.len() as f64;
            }
        }
        for k in 0..k_count {
            if weight_sums[k] == 0.0 {
                continue;
            }
            let mut expect = DVector::zeros(data.cfg.d);
            for (related, arm) in data.relations.iter().zip(&data.raw_arms) {
                if related.contains(&k) {
                    let w = 1.0 / related.len() as f64;
                    expect.axpy(w / weight_sums[k], arm, 1.0);
                }
            }
            assert!((&expect - &data.raw_key_terms[k]).norm() < 1e-9, "key term {k} mismatch");
        }
    }

    #[test]
    fn generation_is_reproducible() {
        let a = generate_synthetic(&small_cfg()).unwrap();
        let b = generate_synthetic(&small_cfg()).unwrap();
        assert_eq!(a.arms, b.arms);
        assert_eq!(a.key_terms, b.key_terms);
        assert_eq!(a.users, b.users);
        assert_eq!(a.relations, b.relations);
    }

    #[test]
    fn assembled_environment_validates() {
        let data = generate_synthetic(&small_cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let env = assemble_environment(&data, 3, 10, 2, 1.0, &mut rng).unwrap();
        assert_eq!(env.num_clients(), 3);
        for c in &env.clients {
            assert_eq!(c.len(), 10);
        }
        assert!(env.theta_star.norm() <= 1.0 + 1e-9);
    }

    #[test]
    fn assemble_rejects_bad_parameters() {
        let data = generate_synthetic(&small_cfg()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(assemble_environment(&data, 0, 10, 0, 1.0, &mut rng).is_err());
        assert!(assemble_environment(&data, 2, 3, 0, 1.0, &mut rng).is_err());
        assert!(assemble_environment(&data, 2, 10, 99, 1.0, &mut rng).is_err());
    }
}
