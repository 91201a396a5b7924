//! Dense symmetric linear algebra and experimental-design solvers.
//!
//! Everything here operates on small dense matrices (d up to a few hundred).
//! All functions are pure; callers own any shared state.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

mod design;
mod spanner;

pub use design::{brute_force_design, g_optimal_design, DesignDistribution};
pub use spanner::barycentric_spanner;

/// Relative eigenvalue cutoff below which a matrix is treated as singular.
pub const SINGULAR_REL_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("input contains NaN or infinite entries")]
    NonFinite,
    #[error("vectors span only {rank} of {dim} dimensions")]
    RankDeficient { rank: usize, dim: usize },
    #[error("no convergence within {0} iterations")]
    NoConvergence(usize),
    #[error("matrix is singular to working precision")]
    Singular,
    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),
}

/// Dense symmetric matrix. All constructors and mutators write both
/// triangles from the same computed value, so `get(i, j) == get(j, i)`
/// holds exactly, not just up to rounding.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    data: DMatrix<f64>,
}

impl SymMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self { dim, data: DMatrix::zeros(dim, dim) }
    }

    pub fn identity(dim: usize) -> Self {
        Self { dim, data: DMatrix::identity(dim, dim) }
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut data = DMatrix::zeros(dim, dim);
        for (i, &v) in diag.iter().enumerate() {
            data[(i, i)] = v;
        }
        Self { dim, data }
    }

    /// Builds the matrix from `f(i, j)` evaluated only on `i <= j`; the
    /// lower triangle mirrors the result bit for bit.
    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = DMatrix::zeros(dim, dim);
        for i in 0..dim {
            for j in i..dim {
                let v = f(i, j);
                data[(i, j)] = v;
                data[(j, i)] = v;
            }
        }
        Self { dim, data }
    }

    /// Symmetric part of an arbitrary square matrix.
    pub fn symmetrize(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols(), "symmetrize requires a square matrix");
        Self::from_fn(m.nrows(), |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
    }

    /// `self += w * v vᵀ`.
    pub fn add_scaled_outer(&mut self, w: f64, v: &DVector<f64>) {
        assert_eq!(v.len(), self.dim);
        for i in 0..self.dim {
            for j in i..self.dim {
                let upd = w * v[i] * v[j];
                self.data[(i, j)] += upd;
                if i != j {
                    self.data[(j, i)] = self.data[(i, j)];
                }
            }
        }
    }

    pub fn add(&mut self, other: &SymMatrix) {
        assert_eq!(self.dim, other.dim);
        self.data += &other.data;
    }

    pub fn scale(&mut self, s: f64) {
        self.data *= s;
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[(i, j)]
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        assert_eq!(self.dim, other.dim);
        let mut m = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                m = m.max((self.data[(i, j)] - other.data[(i, j)]).abs());
            }
        }
        m
    }

    /// Quadratic form `xᵀ A x`.
    pub fn quad_form(&self, x: &DVector<f64>) -> f64 {
        (x.transpose() * &self.data * x)[(0, 0)]
    }

    pub fn mul_vec(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.data * x
    }
}

/// One eigenvalue with its unit-norm eigenvector.
#[derive(Debug, Clone)]
pub struct EigenPair {
    pub value: f64,
    pub vector: DVector<f64>,
}

/// Full eigendecomposition of a symmetric matrix, values sorted descending.
///
/// The returned vectors are orthonormal and each is sign-fixed so that its
/// largest-magnitude component is positive, which makes results reproducible
/// across calls.
pub fn spectral_decompose(v: &SymMatrix) -> Result<Vec<EigenPair>, LinalgError> {
    if !v.is_finite() {
        return Err(LinalgError::NonFinite);
    }
    let eig = v.data.clone().symmetric_eigen();
    let mut pairs: Vec<EigenPair> = (0..v.dim)
        .map(|k| {
            let mut vec = DVector::from_iterator(v.dim, eig.eigenvectors.column(k).iter().cloned());
            // Deterministic sign: largest-|.| component positive.
            let mut imax = 0;
            for i in 1..v.dim {
                if vec[i].abs() > vec[imax].abs() {
                    imax = i;
                }
            }
            if vec[imax] < 0.0 {
                vec.neg_mut();
            }
            EigenPair { value: eig.eigenvalues[k], vector: vec }
        })
        .collect();
    pairs.sort_by(|a, b| b.value.partial_cmp(&a.value).expect("finite eigenvalues"));
    Ok(pairs)
}

/// Solves `G x = w` for PSD `G` through its spectral decomposition.
///
/// Fails with `Singular` when `λ_min(G) < SINGULAR_REL_TOL * λ_max(G)`.
pub fn solve_linear_system(g: &SymMatrix, w: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
    assert_eq!(w.len(), g.dim);
    let pairs = spectral_decompose(g)?;
    let lambda_max = pairs.first().map(|p| p.value).unwrap_or(0.0);
    let lambda_min = pairs.last().map(|p| p.value).unwrap_or(0.0);
    if lambda_max <= 0.0 || lambda_min < SINGULAR_REL_TOL * lambda_max {
        return Err(LinalgError::Singular);
    }
    let mut x = DVector::zeros(g.dim);
    for p in &pairs {
        let coeff = p.vector.dot(w) / p.value;
        x.axpy(coeff, &p.vector, 1.0);
    }
    Ok(x)
}

/// Inverse of a PSD matrix via its spectral decomposition.
pub(crate) fn spectral_inverse(g: &SymMatrix) -> Result<SymMatrix, LinalgError> {
    let pairs = spectral_decompose(g)?;
    let lambda_max = pairs.first().map(|p| p.value).unwrap_or(0.0);
    let lambda_min = pairs.last().map(|p| p.value).unwrap_or(0.0);
    if lambda_max <= 0.0 || lambda_min < SINGULAR_REL_TOL * lambda_max {
        return Err(LinalgError::Singular);
    }
    let mut inv = SymMatrix::zeros(g.dim());
    for p in &pairs {
        inv.add_scaled_outer(1.0 / p.value, &p.vector);
    }
    Ok(inv)
}

/// Greedy maximal-volume selection of `target` indices whose vectors are
/// linearly independent (Gram-Schmidt residual pivoting). Returns the chosen
/// indices or the achieved rank on failure.
pub(crate) fn greedy_independent_subset(
    vectors: &[DVector<f64>],
    target: usize,
) -> Result<Vec<usize>, usize> {
    let mut chosen: Vec<usize> = Vec::with_capacity(target);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(target);
    let mut residuals: Vec<DVector<f64>> = vectors.to_vec();
    for _ in 0..target {
        let mut best = None;
        let mut best_norm = 1e-10;
        for (i, r) in residuals.iter().enumerate() {
            if chosen.contains(&i) {
                continue;
            }
            let n = r.norm();
            if n > best_norm {
                best_norm = n;
                best = Some(i);
            }
        }
        let Some(i) = best else {
            return Err(chosen.len());
        };
        let q = &residuals[i] / best_norm;
        for r in residuals.iter_mut() {
            let c = q.dot(r);
            r.axpy(-c, &q, 1.0);
        }
        basis.push(q);
        chosen.push(i);
    }
    Ok(chosen)
}

/// Rank of the span of `vectors` (up to `max_rank`), via Gram-Schmidt with
/// the same pivot tolerance used for subset selection.
pub fn span_rank(vectors: &[DVector<f64>], max_rank: usize) -> usize {
    match greedy_independent_subset(vectors, max_rank) {
        Ok(ix) => ix.len(),
        Err(rank) => rank,
    }
}

/// Orthonormal basis of the span of `vectors` as the columns of a `d × r`
/// matrix. Used to run design and eigen logic in a reduced dimension.
pub fn span_basis(vectors: &[DVector<f64>]) -> DMatrix<f64> {
    if vectors.is_empty() {
        return DMatrix::zeros(0, 0);
    }
    let d = vectors[0].len();
    let mut basis: Vec<DVector<f64>> = Vec::new();
    for v in vectors {
        let mut r = v.clone();
        for q in &basis {
            let c = q.dot(&r);
            r.axpy(-c, q, 1.0);
        }
        let n = r.norm();
        if n > 1e-10 {
            basis.push(r / n);
        }
        if basis.len() == d {
            break;
        }
    }
    let r = basis.len();
    DMatrix::from_fn(d, r, |i, j| basis[j][i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn reconstruct(pairs: &[EigenPair], dim: usize) -> SymMatrix {
        let mut m = SymMatrix::zeros(dim);
        for p in pairs {
            m.add_scaled_outer(p.value, &p.vector);
        }
        m
    }

    fn random_psd(dim: usize, seed: u64) -> SymMatrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        SymMatrix::symmetrize(&(&a * a.transpose()))
    }

    #[test]
    fn decompose_identity() {
        let pairs = spectral_decompose(&SymMatrix::identity(3)).unwrap();
        assert_eq!(pairs.len(), 3);
        for p in &pairs {
            assert_abs_diff_eq!(p.value, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(p.vector.norm(), 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn decompose_diagonal() {
        let pairs = spectral_decompose(&SymMatrix::from_diagonal(&[3.0, 1.0])).unwrap();
        assert_abs_diff_eq!(pairs[0].value, 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pairs[1].value, 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pairs[0].vector[0].abs(), 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(pairs[1].vector[1].abs(), 1.0, epsilon = 1e-9);
    }

    #[test]
    fn decompose_reconstructs_random_psd() {
        let v = random_psd(5, 42);
        let pairs = spectral_decompose(&v).unwrap();
        assert!(reconstruct(&pairs, 5).max_abs_diff(&v) < 1e-8);
        // Pairwise orthonormality.
        for i in 0..5 {
            for j in 0..5 {
                let dot = pairs[i].vector.dot(&pairs[j].vector);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-8, "dot({i},{j}) = {dot}");
            }
        }
    }

    #[test]
    fn decompose_rejects_non_finite() {
        let mut v = SymMatrix::identity(2);
        v.data[(0, 0)] = f64::NAN;
        assert!(matches!(spectral_decompose(&v), Err(LinalgError::NonFinite)));
    }

    #[test]
    fn solve_identity_and_diagonal() {
        let x = solve_linear_system(&SymMatrix::identity(3), &DVector::from_vec(vec![1.0, 2.0, 3.0]))
            .unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[2], 3.0, epsilon = 1e-12);

        let g = SymMatrix::from_diagonal(&[2.0, 4.0]);
        let x = solve_linear_system(&g, &DVector::from_vec(vec![2.0, 8.0])).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(x[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn solve_residual_on_random_psd() {
        // Well-conditioned: AAᵀ + I/2.
        let mut g = random_psd(10, 7);
        for i in 0..10 {
            g.data[(i, i)] += 0.5;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let w = DVector::from_fn(10, |_, _| rng.random_range(-2.0..2.0));
        let x = solve_linear_system(&g, &w).unwrap();
        let residual = (g.mul_vec(&x) - &w).norm();
        assert!(residual <= 1e-8 * (1.0 + w.norm()), "residual {residual}");
    }

    #[test]
    fn solve_singular_matrix() {
        let g = SymMatrix::zeros(3);
        assert!(matches!(
            solve_linear_system(&g, &DVector::zeros(3)),
            Err(LinalgError::Singular)
        ));
        let g = SymMatrix::from_diagonal(&[1.0, 1e-15]);
        assert!(matches!(
            solve_linear_system(&g, &DVector::from_vec(vec![1.0, 1.0])),
            Err(LinalgError::Singular)
        ));
    }

    #[test]
    fn span_helpers() {
        let e1 = DVector::from_vec(vec![1.0, 0.0]);
        let e2 = DVector::from_vec(vec![0.0, 1.0]);
        assert_eq!(span_rank(&[e1.clone(), e1.clone()], 2), 1);
        assert_eq!(span_rank(&[e1.clone(), e2.clone()], 2), 2);
        let b = span_basis(&[e1.clone(), e1.clone()]);
        assert_eq!(b.ncols(), 1);
    }

    proptest! {
        #[test]
        fn decompose_roundtrips(dim in 1usize..6, seed in 0u64..500) {
            let v = random_psd(dim, seed);
            let pairs = spectral_decompose(&v).unwrap();
            prop_assert!(reconstruct(&pairs, dim).max_abs_diff(&v) < 1e-8);
            // Descending order.
            for w in pairs.windows(2) {
                prop_assert!(w[0].value >= w[1].value);
            }
            for i in 0..dim {
                for j in (i + 1)..dim {
                    prop_assert!(pairs[i].vector.dot(&pairs[j].vector).abs() <= 1e-8);
                }
            }
        }

        #[test]
        fn solve_then_apply_is_identity(seed in 0u64..200) {
            let mut g = random_psd(6, seed);
            for i in 0..6 {
                g.data[(i, i)] += 1.0;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xfeed);
            let w = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
            let x = solve_linear_system(&g, &w).unwrap();
            prop_assert!((g.mul_vec(&x) - &w).norm() <= 1e-8 * (1.0 + w.norm()));
        }
    }
}
