//! Feedback-matrix ingestion via truncated SVD.
//!
//! A binary user × item feedback matrix R is factored as R ≈ U S Vᵀ; user
//! vectors take the singular-value scaling (rows of U_d S_d) and arm vectors
//! are the rows of V_d renormalized to unit length, with the dropped row
//! norms reported separately so R can still be reconstructed as
//! `user · arm · scale`.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader};
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::EnvError;

/// Sparse binary feedback matrix (entries are 0 or 1; absent means 0).
#[derive(Debug, Clone, PartialEq)]
pub struct FeedbackMatrix {
    pub num_users: usize,
    pub num_items: usize,
    /// (user, item) pairs with feedback 1, deduplicated and sorted.
    pub positives: Vec<(usize, usize)>,
}

impl FeedbackMatrix {
    pub fn from_triples(triples: &[(usize, usize, f64)]) -> Result<Self, EnvError> {
        let mut positives = Vec::new();
        let mut num_users = 0;
        let mut num_items = 0;
        for &(u, i, v) in triples {
            if v != 0.0 && v != 1.0 {
                return Err(EnvError::BadShape(format!(
                    "entry ({u}, {i}) = {v} is not binary; binarize first"
                )));
            }
            num_users = num_users.max(u + 1);
            num_items = num_items.max(i + 1);
            if v == 1.0 {
                positives.push((u, i));
            }
        }
        positives.sort_unstable();
        positives.dedup();
        if positives.is_empty() {
            return Err(EnvError::BadShape("feedback matrix has no positive entries".into()));
        }
        Ok(Self { num_users, num_items, positives })
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.num_users, self.num_items);
        for &(u, i) in &self.positives {
            m[(u, i)] = 1.0;
        }
        m
    }
}

#[derive(Debug, Clone)]
pub struct IngestResult {
    /// Per-user preference vectors (rows of U_d S_d).
    pub users: Vec<DVector<f64>>,
    /// Per-item arm vectors, unit norm (all-zero rows stay zero).
    pub arms: Vec<DVector<f64>>,
    /// Norm of each raw arm row; `users[u] · arms[i] * arm_scales[i]`
    /// reconstructs the rank-d approximation of R.
    pub arm_scales: Vec<f64>,
}

pub fn ingest_feedback_matrix(r: &FeedbackMatrix, d: usize) -> Result<IngestResult, EnvError> {
    if d == 0 || d > r.num_users.min(r.num_items) {
        return Err(EnvError::BadShape(format!(
            "d = {d} outside [1, min({}, {})]",
            r.num_users, r.num_items
        )));
    }
    let dense = r.to_dense();
    let svd = dense.svd(true, true);
    let u = svd.u.as_ref().expect("requested U");
    let v_t = svd.v_t.as_ref().expect("requested Vᵀ");

    // Top-d singular triplets, largest first.
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].partial_cmp(&svd.singular_values[a]).unwrap());
    let top: Vec<usize> = order.into_iter().take(d).collect();

    let users = (0..r.num_users)
        .map(|row| DVector::from_fn(d, |j, _| u[(row, top[j])] * svd.singular_values[top[j]]))
        .collect();
    let mut arms = Vec::with_capacity(r.num_items);
    let mut arm_scales = Vec::with_capacity(r.num_items);
    for col in 0..r.num_items {
        let raw = DVector::from_fn(d, |j, _| v_t[(top[j], col)]);
        let n = raw.norm();
        arm_scales.push(n);
        arms.push(if n < 1e-12 { DVector::zeros(d) } else { raw / n });
    }
    Ok(IngestResult { users, arms, arm_scales })
}

/// Reads `user_id,item_id,value` CSV. With a binarize threshold, values
/// strictly above it map to 1 and the rest to 0; without one, values must
/// already be binary. Ids are remapped densely in order of first appearance.
pub fn read_feedback_csv(
    path: &Path,
    binarize_threshold: Option<f64>,
) -> Result<FeedbackMatrix, EnvError> {
    let file = std::fs::File::open(path)?;
    let reader = BufReader::new(file);
    let mut user_ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut item_ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut triples = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if lineno == 0 {
            let header: Vec<&str> = line.split(',').map(str::trim).collect();
            if header != ["user_id", "item_id", "value"] {
                return Err(EnvError::BadFormat(format!(
                    "expected header user_id,item_id,value, got {line:?}"
                )));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(EnvError::BadFormat(format!("line {}: expected 3 fields", lineno + 1)));
        }
        let value: f64 = fields[2]
            .parse()
            .map_err(|_| EnvError::BadFormat(format!("line {}: bad value", lineno + 1)))?;
        let value = match binarize_threshold {
            Some(th) => {
                if value > th {
                    1.0
                } else {
                    0.0
                }
            }
            None => value,
        };
        let next_u = user_ids.len();
        let u = *user_ids.entry(fields[0].to_string()).or_insert(next_u);
        let next_i = item_ids.len();
        let i = *item_ids.entry(fields[1].to_string()).or_insert(next_i);
        triples.push((u, i, value));
    }
    FeedbackMatrix::from_triples(&triples)
}
