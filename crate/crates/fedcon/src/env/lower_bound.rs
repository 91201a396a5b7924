//! Adversarial two-environment instances for lower-bound experiments.
//!
//! Both environments share one arm set (the standard basis plus arbitrary
//! unit fillers, also used as the key-term set) and unit Gaussian noise. The
//! first hides θ = (Δ, 0, …, 0) with Δ = √((d−1)/(MT)); the second moves the
//! optimum by placing 2Δ at a chosen coordinate s > 1, so any policy that
//! under-explores coordinate s cannot tell them apart.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{unit_or_basis, EnvError, Environment};

/// Builds the (θ, θ′) environment pair.
///
/// `split_coord` is the 0-indexed coordinate s receiving 2Δ in θ′ and must be
/// at least 1 (the paper picks the least-pulled coordinate of the attacked
/// policy; tests supply it directly). Defaults to 1.
pub fn build_lowerbound_instance(
    d: usize,
    num_arms: usize,
    num_clients: usize,
    horizon: u64,
    split_coord: Option<usize>,
    seed: u64,
) -> Result<(Environment, Environment), EnvError> {
    if d < 2 {
        return Err(EnvError::BadConfig("need dimension at least 2".into()));
    }
    if num_arms < d {
        return Err(EnvError::BadShape(format!("need at least d = {d} arms, got {num_arms}")));
    }
    if num_clients == 0 || horizon == 0 {
        return Err(EnvError::BadConfig("clients and horizon must be positive".into()));
    }
    let s = split_coord.unwrap_or(1);
    if s == 0 || s >= d {
        return Err(EnvError::BadConfig(format!("split coordinate {s} must lie in [1, {})", d)));
    }
    let delta = ((d as f64 - 1.0) / (num_clients as f64 * horizon as f64)).sqrt();
    if delta > 1.0 {
        return Err(EnvError::BadConfig(format!(
            "gap Δ = {delta} exceeds 1; increase M·T or reduce d"
        )));
    }

    let mut arms: Vec<DVector<f64>> =
        (0..d).map(|i| DVector::from_fn(d, |j, _| if i == j { 1.0 } else { 0.0 })).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    for _ in d..num_arms {
        arms.push(unit_or_basis(DVector::from_fn(d, |_, _| normal.sample(&mut rng))));
    }

    let mut theta = DVector::zeros(d);
    theta[0] = delta;
    let mut theta_prime = theta.clone();
    theta_prime[s] = 2.0 * delta;

    let all_ids: Vec<usize> = (0..num_arms).collect();
    let base = Environment {
        dim: d,
        arms: arms.clone(),
        key_terms: arms,
        clients: vec![all_ids; num_clients],
        theta_star: theta,
        noise_std: 1.0,
    };
    let mut alt = base.clone();
    alt.theta_star = theta_prime;
    base.validate()?;
    alt.validate()?;
    Ok((base, alt))
}
