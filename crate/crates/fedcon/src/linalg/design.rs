//! G-optimal experimental design.
//!
//! `g_optimal_design` minimizes g(π) = max_a ‖a‖²_{V(π)⁻¹} over distributions
//! π on the arm set with the Frank-Wolfe / Wolfe-Atwood scheme (vertex and
//! away steps share the same closed-form step size). The optimum value is d
//! when the arms span Rᵈ, and a minimizer supported on at most d(d+1)/2 arms
//! exists; the solver prunes and, if needed, Carathéodory-reduces its iterate
//! to stay within that support bound.
//!
//! `brute_force_design` is an exhaustive simplex-grid oracle for tiny
//! instances, kept deliberately independent of the Frank-Wolfe path.

use nalgebra::{DMatrix, DVector};

use super::{greedy_independent_subset, spectral_inverse, LinalgError, SymMatrix};

/// A probability distribution over an arm list together with its information
/// matrix V(π) = Σ π(a) a aᵀ and the attained value g(π).
#[derive(Debug, Clone)]
pub struct DesignDistribution {
    /// One weight per input arm, on the simplex.
    pub weights: Vec<f64>,
    pub info_matrix: SymMatrix,
    /// max_a aᵀ V(π)⁻¹ a over the input arms.
    pub g_value: f64,
}

impl DesignDistribution {
    /// Indices with strictly positive weight.
    pub fn support(&self) -> Vec<usize> {
        self.weights
            .iter()
            .enumerate()
            .filter(|(_, &w)| w > 0.0)
            .map(|(i, _)| i)
            .collect()
    }

    fn from_weights(arms: &[DVector<f64>], weights: Vec<f64>) -> Self {
        let d = arms[0].len();
        let mut info = SymMatrix::zeros(d);
        for (w, a) in weights.iter().zip(arms) {
            if *w > 0.0 {
                info.add_scaled_outer(*w, a);
            }
        }
        let g_value = match spectral_inverse(&info) {
            Ok(inv) => arms.iter().map(|a| inv.quad_form(a)).fold(f64::NEG_INFINITY, f64::max),
            Err(_) => f64::INFINITY,
        };
        Self { weights, info_matrix: info, g_value }
    }
}

const PRUNE_THRESHOLD: f64 = 1e-6;
const INVERSE_REFRESH_PERIOD: usize = 64;

/// Weight dust below `PRUNE_THRESHOLD` is dropped and the rest renormalized.
fn prune(weights: &mut [f64]) {
    let mut total = 0.0;
    for w in weights.iter_mut() {
        if *w < PRUNE_THRESHOLD {
            *w = 0.0;
        } else {
            total += *w;
        }
    }
    for w in weights.iter_mut() {
        *w /= total;
    }
}

struct FwState {
    weights: Vec<f64>,
    info: SymMatrix,
    inv: SymMatrix,
    since_refresh: usize,
}

impl FwState {
    fn new(arms: &[DVector<f64>], weights: Vec<f64>) -> Result<Self, LinalgError> {
        let d = arms[0].len();
        let mut info = SymMatrix::zeros(d);
        for (w, a) in weights.iter().zip(arms) {
            if *w > 0.0 {
                info.add_scaled_outer(*w, a);
            }
        }
        let inv = spectral_inverse(&info)?;
        Ok(Self { weights, info, inv, since_refresh: 0 })
    }

    /// V ← c·V + t·a aᵀ with the matching Sherman-Morrison update of V⁻¹.
    /// Falls back to a fresh spectral inverse when the update is ill-posed
    /// or on the periodic refresh tick.
    fn rank_one_update(&mut self, arms: &[DVector<f64>], c: f64, t: f64, a_idx: usize) -> Result<(), LinalgError> {
        let a = &arms[a_idx];
        self.info.scale(c);
        self.info.add_scaled_outer(t, a);
        self.since_refresh += 1;
        let denom_scale = t / c;
        let quad = self.inv.quad_form(a);
        let denom = 1.0 + denom_scale * quad;
        if self.since_refresh >= INVERSE_REFRESH_PERIOD || denom.abs() < 1e-10 || !denom.is_finite() {
            self.inv = spectral_inverse(&self.info)?;
            self.since_refresh = 0;
            return Ok(());
        }
        let u = self.inv.mul_vec(a);
        let coeff = -denom_scale / denom / c;
        let mut new_inv = self.inv.clone();
        new_inv.scale(1.0 / c);
        new_inv.add_scaled_outer(coeff, &u);
        self.inv = new_inv;
        Ok(())
    }
}

/// Computes a (1+tol)-approximate G-optimal design on `arms`.
///
/// Errors with `RankDeficient` when the arms do not span the ambient space
/// (callers reduce the dimension first) and `NoConvergence` when `max_iter`
/// runs out before g(π) ≤ d(1+tol).
pub fn g_optimal_design(
    arms: &[DVector<f64>],
    tol: f64,
    max_iter: usize,
) -> Result<DesignDistribution, LinalgError> {
    assert!(tol > 0.0, "tolerance must be positive");
    if arms.is_empty() {
        return Err(LinalgError::RankDeficient { rank: 0, dim: 0 });
    }
    let d = arms[0].len();
    if arms.iter().any(|a| a.len() != d || a.iter().any(|x| !x.is_finite())) {
        return Err(LinalgError::NonFinite);
    }
    let init = greedy_independent_subset(arms, d)
        .map_err(|rank| LinalgError::RankDeficient { rank, dim: d })?;

    let mut weights = vec![0.0; arms.len()];
    for &i in &init {
        weights[i] = 1.0 / d as f64;
    }
    let mut state = FwState::new(arms, weights)?;

    // Converge below the requested tolerance so that pruning and support
    // reduction keep the final iterate within d(1+tol).
    let inner_tol = 0.5 * tol;
    let max_support = d * (d + 1) / 2;
    let mut iters_left = max_iter;

    for _round in 0..4 {
        run_fw_loop(arms, &mut state, d, inner_tol, &mut iters_left)?;
        prune(&mut state.weights);
        state = FwState::new(arms, state.weights)?;
        if state.weights.iter().filter(|&&w| w > 0.0).count() > max_support {
            reduce_support(arms, &mut state.weights, max_support, d)?;
            state = FwState::new(arms, state.weights)?;
        }
        let g = g_of(arms, &state.inv);
        if g <= d as f64 * (1.0 + tol) {
            let design = DesignDistribution::from_weights(arms, state.weights);
            debug_assert!(design.g_value <= d as f64 * (1.0 + 2.0 * tol));
            return Ok(design);
        }
        if iters_left == 0 {
            break;
        }
    }
    Err(LinalgError::NoConvergence(max_iter))
}

fn g_of(arms: &[DVector<f64>], inv: &SymMatrix) -> f64 {
    arms.iter().map(|a| inv.quad_form(a)).fold(f64::NEG_INFINITY, f64::max)
}

fn run_fw_loop(
    arms: &[DVector<f64>],
    state: &mut FwState,
    d: usize,
    tol: f64,
    iters_left: &mut usize,
) -> Result<(), LinalgError> {
    let df = d as f64;
    while *iters_left > 0 {
        *iters_left -= 1;
        // Leverage scores under the current inverse.
        let mut g_max = f64::NEG_INFINITY;
        let mut j_max = 0;
        let mut g_min_support = f64::INFINITY;
        let mut j_min = usize::MAX;
        for (i, a) in arms.iter().enumerate() {
            let gi = state.inv.quad_form(a);
            if gi > g_max {
                g_max = gi;
                j_max = i;
            }
            if state.weights[i] > 0.0 && gi < g_min_support {
                g_min_support = gi;
                j_min = i;
            }
        }
        if g_max <= df * (1.0 + tol) {
            return Ok(());
        }
        let add_violation = g_max / df - 1.0;
        let drop_violation = 1.0 - g_min_support / df;
        if add_violation >= drop_violation || j_min == usize::MAX {
            // Vertex step toward the worst-predicted arm.
            let gamma = (g_max - df) / (df * (g_max - 1.0));
            let gamma = gamma.clamp(1e-12, 1.0 - 1e-12);
            for w in state.weights.iter_mut() {
                *w *= 1.0 - gamma;
            }
            state.weights[j_max] += gamma;
            state.rank_one_update(arms, 1.0 - gamma, gamma, j_max)?;
        } else {
            // Away step off the best-covered support arm.
            let w_k = state.weights[j_min];
            let gamma_cap = w_k / (1.0 - w_k).max(1e-12);
            let gamma = if g_min_support <= 1.0 {
                gamma_cap
            } else {
                ((df - g_min_support) / (df * (g_min_support - 1.0))).min(gamma_cap)
            };
            let gamma = gamma.clamp(0.0, gamma_cap);
            if gamma <= 0.0 {
                continue;
            }
            for w in state.weights.iter_mut() {
                *w *= 1.0 + gamma;
            }
            state.weights[j_min] -= gamma;
            if state.weights[j_min] < 1e-14 {
                state.weights[j_min] = 0.0;
            }
            state.rank_one_update(arms, 1.0 + gamma, -gamma, j_min)?;
        }
    }
    // Out of iterations; caller decides whether the current iterate passes.
    Ok(())
}

/// Shrinks the support to `max_support` atoms.
///
/// While more than `max_support + 1` atoms carry weight, an exact null-space
/// (Carathéodory) step removes one atom without changing V(π) at all. The
/// final atom, if needed, is dropped by scanning for the removal that least
/// degrades g.
fn reduce_support(
    arms: &[DVector<f64>],
    weights: &mut [f64],
    max_support: usize,
    d: usize,
) -> Result<(), LinalgError> {
    loop {
        let support: Vec<usize> =
            weights.iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(i, _)| i).collect();
        if support.len() <= max_support {
            return Ok(());
        }
        if !caratheodory_step(arms, weights, &support, d) {
            drop_least_damaging(arms, weights, &support)?;
        }
    }
}

/// One exact support-reduction step: finds c with Σ cᵢ aᵢaᵢᵀ = 0 and Σ cᵢ = 0
/// over the support and walks the weights until one hits zero. Returns false
/// when no usable null direction exists.
fn caratheodory_step(
    arms: &[DVector<f64>],
    weights: &mut [f64],
    support: &[usize],
    d: usize,
) -> bool {
    let rows = d * (d + 1) / 2 + 1;
    let m = support.len();
    let z = DMatrix::from_fn(rows, m, |r, c| {
        let a = &arms[support[c]];
        if r == rows - 1 {
            1.0
        } else {
            // Row-major upper triangle of a aᵀ.
            let (i, j) = triangle_index(r, d);
            a[i] * a[j]
        }
    });
    // Null vector of Z from the smallest eigenpair of ZᵀZ.
    let gram = SymMatrix::symmetrize(&(z.transpose() * &z));
    let Ok(pairs) = super::spectral_decompose(&gram) else { return false };
    let last = pairs.last().expect("nonempty");
    let scale = pairs.first().map(|p| p.value.abs()).unwrap_or(1.0).max(1.0);
    if last.value.abs() > 1e-12 * scale {
        return false;
    }
    apply_null_direction(weights, support, &last.vector)
}

fn apply_null_direction(weights: &mut [f64], support: &[usize], c: &DVector<f64>) -> bool {
    // Orient c so it has a positive entry, then walk in -c direction until
    // the first positive-c atom hits zero.
    let mut c = c.clone();
    if c.iter().cloned().fold(f64::NEG_INFINITY, f64::max) <= 1e-12 {
        c.neg_mut();
    }
    let mut t_best = f64::INFINITY;
    let mut hit = None;
    for (pos, &i) in support.iter().enumerate() {
        if c[pos] > 1e-12 {
            let t = weights[i] / c[pos];
            if t < t_best {
                t_best = t;
                hit = Some(pos);
            }
        }
    }
    let Some(hit) = hit else { return false };
    for (pos, &i) in support.iter().enumerate() {
        weights[i] -= t_best * c[pos];
        if weights[i] < 1e-14 || pos == hit {
            weights[i] = weights[i].max(0.0);
        }
    }
    weights[support[hit]] = 0.0;
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    true
}

fn triangle_index(r: usize, d: usize) -> (usize, usize) {
    let mut k = r;
    for i in 0..d {
        let row_len = d - i;
        if k < row_len {
            return (i, i + k);
        }
        k -= row_len;
    }
    unreachable!("triangle index out of range");
}

fn drop_least_damaging(
    arms: &[DVector<f64>],
    weights: &mut [f64],
    support: &[usize],
) -> Result<(), LinalgError> {
    let mut best: Option<(usize, f64)> = None;
    for &i in support {
        let mut trial = weights.to_vec();
        trial[i] = 0.0;
        let total: f64 = trial.iter().sum();
        if total <= 0.0 {
            continue;
        }
        for w in trial.iter_mut() {
            *w /= total;
        }
        let cand = DesignDistribution::from_weights(arms, trial);
        if cand.g_value.is_finite() && best.as_ref().is_none_or(|(_, g)| cand.g_value < *g) {
            best = Some((i, cand.g_value));
        }
    }
    let Some((i, _)) = best else {
        return Err(LinalgError::NoConvergence(0));
    };
    weights[i] = 0.0;
    let total: f64 = weights.iter().sum();
    for w in weights.iter_mut() {
        *w /= total;
    }
    Ok(())
}

/// Exhaustive simplex-grid minimizer of g(π) for test-oracle use.
///
/// Only instances with at most 6 arms, d ≤ 3, and a grid that stays under an
/// enumeration cap are accepted; everything else is `TooLarge`.
pub fn brute_force_design(
    arms: &[DVector<f64>],
    grid_step: f64,
) -> Result<DesignDistribution, LinalgError> {
    const MAX_COMBINATIONS: u64 = 20_000_000;
    if arms.is_empty() {
        return Err(LinalgError::RankDeficient { rank: 0, dim: 0 });
    }
    let d = arms[0].len();
    if arms.len() > 6 || d > 3 {
        return Err(LinalgError::TooLarge(format!("{} arms in dimension {}", arms.len(), d)));
    }
    if !(grid_step > 0.0 && grid_step <= 0.1) {
        return Err(LinalgError::TooLarge(format!("grid step {grid_step} outside (0, 0.1]")));
    }
    let rank = greedy_independent_subset(arms, d).map(|ix| ix.len()).unwrap_or_else(|r| r);
    if rank < d {
        return Err(LinalgError::RankDeficient { rank, dim: d });
    }
    let steps = (1.0 / grid_step).round() as u64;
    let combos = n_compositions(steps, arms.len() as u64);
    if combos > MAX_COMBINATIONS {
        return Err(LinalgError::TooLarge(format!("{combos} grid points")));
    }

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut counts = vec![0u64; arms.len()];
    enumerate_compositions(steps, 0, &mut counts, &mut |counts| {
        let weights: Vec<f64> = counts.iter().map(|&c| c as f64 / steps as f64).collect();
        let mut info = SymMatrix::zeros(d);
        for (w, a) in weights.iter().zip(arms) {
            if *w > 0.0 {
                info.add_scaled_outer(*w, a);
            }
        }
        let Ok(inv) = spectral_inverse(&info) else { return };
        let g = arms.iter().map(|a| inv.quad_form(a)).fold(f64::NEG_INFINITY, f64::max);
        if best.as_ref().is_none_or(|(_, bg)| g < *bg) {
            best = Some((weights, g));
        }
    });
    match best {
        Some((weights, _)) => Ok(DesignDistribution::from_weights(arms, weights)),
        None => Err(LinalgError::RankDeficient { rank, dim: d }),
    }
}

fn n_compositions(total: u64, parts: u64) -> u64 {
    // C(total + parts - 1, parts - 1), saturating.
    let mut acc: u64 = 1;
    for i in 0..(parts - 1) {
        acc = acc.saturating_mul(total + i + 1) / (i + 1);
        if acc > u64::MAX / 2 {
            return u64::MAX;
        }
    }
    acc
}

fn enumerate_compositions(
    remaining: u64,
    pos: usize,
    counts: &mut Vec<u64>,
    f: &mut impl FnMut(&[u64]),
) {
    if pos == counts.len() - 1 {
        counts[pos] = remaining;
        f(counts);
        return;
    }
    for c in 0..=remaining {
        counts[pos] = c;
        enumerate_compositions(remaining - c, pos + 1, counts, f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn basis(d: usize) -> Vec<DVector<f64>> {
        (0..d)
            .map(|i| DVector::from_fn(d, |j, _| if i == j { 1.0 } else { 0.0 }))
            .collect()
    }

    fn unit(v: Vec<f64>) -> DVector<f64> {
        let v = DVector::from_vec(v);
        let n = v.norm();
        v / n
    }

    fn random_unit_arms(n: usize, d: usize, seed: u64) -> Vec<DVector<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let v = DVector::from_fn(d, |_, _| rng.random_range(-1.0..1.0f64));
                let n = v.norm();
                if n < 1e-9 {
                    basis(d)[0].clone()
                } else {
                    v / n
                }
            })
            .collect()
    }

    #[test]
    fn design_on_orthonormal_basis_is_uniform() {
        for d in [2usize, 3, 5] {
            let design = g_optimal_design(&basis(d), 1e-2, 10_000).unwrap();
            assert_abs_diff_eq!(design.g_value, d as f64, epsilon = 1e-6 * d as f64);
            for w in &design.weights {
                assert_abs_diff_eq!(*w, 1.0 / d as f64, epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn design_drops_redundant_diagonal_arm() {
        let arms = vec![
            unit(vec![1.0, 0.0]),
            unit(vec![0.0, 1.0]),
            unit(vec![1.0, 1.0]),
        ];
        let design = g_optimal_design(&arms, 1e-2, 10_000).unwrap();
        assert_abs_diff_eq!(design.weights[0], 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(design.weights[1], 0.5, epsilon = 1e-6);
        assert!(design.weights[2] < 1e-6);
        assert_abs_diff_eq!(design.g_value, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn design_rejects_rank_deficient_arms() {
        let arms = vec![unit(vec![1.0, 0.0])];
        assert!(matches!(
            g_optimal_design(&arms, 1e-2, 1000),
            Err(LinalgError::RankDeficient { rank: 1, dim: 2 })
        ));
    }

    #[test]
    fn brute_force_two_basis_arms() {
        let design = brute_force_design(&basis(2), 0.01).unwrap();
        assert_abs_diff_eq!(design.weights[0], 0.5, epsilon = 1e-9);
        assert_abs_diff_eq!(design.weights[1], 0.5, epsilon = 1e-9);
    }

    #[test]
    fn brute_force_matches_kiefer_wolfowitz_value() {
        let arms = vec![
            unit(vec![1.0, 0.0]),
            unit(vec![0.0, 1.0]),
            unit(vec![1.0, 1.0]),
        ];
        let design = brute_force_design(&arms, 1e-3).unwrap();
        assert!((design.g_value - 2.0).abs() <= 0.01, "g = {}", design.g_value);
        assert!(design.weights[2] <= 1e-3 + 1e-12);
    }

    #[test]
    fn brute_force_degenerate_inputs() {
        assert!(matches!(
            brute_force_design(&[unit(vec![1.0, 0.0])], 0.05),
            Err(LinalgError::RankDeficient { .. })
        ));
        let seven = random_unit_arms(7, 2, 3);
        assert!(matches!(brute_force_design(&seven, 0.05), Err(LinalgError::TooLarge(_))));
        assert!(matches!(brute_force_design(&basis(2), 0.2), Err(LinalgError::TooLarge(_))));
    }

    #[test]
    fn fw_matches_brute_force_on_small_instances() {
        for seed in 0..8u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d = rng.random_range(2..=3usize);
            let n = rng.random_range((d + 1)..=6usize);
            let arms = random_unit_arms(n, d, seed ^ 0xabc);
            if super::super::span_rank(&arms, d) < d {
                continue;
            }
            let step = match n {
                0..=4 => 0.01,
                5 => 0.02,
                _ => 0.05,
            };
            let fw = g_optimal_design(&arms, 1e-2, 10_000).unwrap();
            let brute = brute_force_design(&arms, step).unwrap();
            let slack = d as f64 * 1e-2 + 10.0 * step;
            assert!(
                (fw.g_value - brute.g_value).abs() <= slack,
                "seed {seed}: fw {} vs brute {}",
                fw.g_value,
                brute.g_value
            );
        }
    }

    #[test]
    fn design_invariants_on_random_arm_sets() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(77));
            let d = rng.random_range(2..=8usize);
            let n = rng.random_range((d + 1)..=40usize);
            let arms = random_unit_arms(n, d, seed ^ 0x51);
            let design = g_optimal_design(&arms, 1e-2, 20_000).unwrap();
            let df = d as f64;
            assert!(design.g_value >= df - 1e-6, "g below d: {}", design.g_value);
            assert!(design.g_value <= df * 1.01 + 1e-9, "g above bound: {}", design.g_value);
            assert!(design.support().len() <= d * (d + 1) / 2);
            let total: f64 = design.weights.iter().sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-9);
            assert!(design.weights.iter().all(|&w| w >= 0.0));
            // Info matrix consistency.
            let mut expect = SymMatrix::zeros(d);
            for (w, a) in design.weights.iter().zip(&arms) {
                if *w > 0.0 {
                    expect.add_scaled_outer(*w, a);
                }
            }
            assert!(design.info_matrix.max_abs_diff(&expect) <= 1e-9);
        }
    }
}
