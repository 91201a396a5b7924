//! Barycentric spanner computation (Awerbuch-Kleinberg exchange algorithm).

use nalgebra::{DMatrix, DVector};

use super::{greedy_independent_subset, LinalgError};

/// Selects `d` vector indices such that every input vector is a linear
/// combination of the selected ones with all coefficients in
/// `[-approx, approx]`.
///
/// The exchange loop swaps a basis slot whenever some vector's Cramer
/// coefficient exceeds `approx`, which multiplies |det| by that factor, so
/// termination is geometric for `approx > 1`.
pub fn barycentric_spanner(
    vectors: &[DVector<f64>],
    approx: f64,
) -> Result<Vec<usize>, LinalgError> {
    assert!(approx >= 1.0, "approximation factor must be at least 1");
    if vectors.is_empty() {
        return Err(LinalgError::RankDeficient { rank: 0, dim: 0 });
    }
    let d = vectors[0].len();
    if vectors.iter().any(|v| v.len() != d || v.iter().any(|x| !x.is_finite())) {
        return Err(LinalgError::NonFinite);
    }
    let mut basis = greedy_independent_subset(vectors, d)
        .map_err(|rank| LinalgError::RankDeficient { rank, dim: d })?;

    let max_sweeps = 10_000;
    for _ in 0..max_sweeps {
        let b = basis_matrix(vectors, &basis, d);
        let lu = b.lu();
        let mut swapped = false;
        for (i, v) in vectors.iter().enumerate() {
            if basis.contains(&i) {
                continue;
            }
            let Some(coeffs) = lu.solve(v) else { continue };
            let (slot, worst) = coeffs
                .iter()
                .cloned()
                .map(f64::abs)
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
                .expect("nonempty coefficient vector");
            if worst > approx * (1.0 + 1e-9) {
                basis[slot] = i;
                swapped = true;
                break;
            }
        }
        if !swapped {
            return Ok(basis);
        }
    }
    Err(LinalgError::NoConvergence(max_sweeps))
}

fn basis_matrix(vectors: &[DVector<f64>], basis: &[usize], d: usize) -> DMatrix<f64> {
    DMatrix::from_fn(d, basis.len(), |i, j| vectors[basis[j]][i])
}
