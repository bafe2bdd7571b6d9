//! Probability vectors and the divergences between them.
//!
//! All logarithms are base 2, so [`js`] lies in `[0, 1]`. Both arguments of
//! [`kl`] and [`js`] are ε-smoothed ([`EPSILON`] added to every entry, then
//! renormalized), which keeps KL finite when supports are disjoint.

use alloc::format;
use alloc::vec::Vec;

use crate::{Error, Matrix, Result};

/// Additive smoothing applied before any divergence.
pub const EPSILON: f64 = 1e-12;

const SUM_TOLERANCE: f64 = 1e-9;

/// A nonnegative vector of length ≥ 2 summing to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution(Vec<f64>);

impl Distribution {
    /// Wraps `values` after checking the distribution invariants.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidDistribution(format!(
                "length {} is below 2",
                values.len()
            )));
        }
        if let Some(x) = values.iter().find(|x| !x.is_finite() || **x < 0.0) {
            return Err(Error::InvalidDistribution(format!(
                "entry {x} is not a probability"
            )));
        }
        let total: f64 = values.iter().sum();
        if libm::fabs(total - 1.0) > SUM_TOLERANCE {
            return Err(Error::InvalidDistribution(format!(
                "entries sum to {total}"
            )));
        }
        Ok(Self(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl AsRef<[f64]> for Distribution {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

/// Scales a nonnegative vector to unit sum.
pub fn normalize(values: &[f64]) -> Result<Distribution> {
    if values.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidDistribution(
            "negative or non-finite entry".into(),
        ));
    }
    let total: f64 = values.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateDistribution);
    }
    Distribution::new(values.iter().map(|x| x / total).collect())
}

/// `(x + ε) / (Σx + len·ε)` for every entry.
pub fn smooth(values: &[f64]) -> Vec<f64> {
    let total: f64 = values.iter().sum::<f64>() + values.len() as f64 * EPSILON;
    values.iter().map(|x| (x + EPSILON) / total).collect()
}

/// Σ p log2(p / q) with the 0·log 0 = 0 convention and no smoothing.
fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * libm::log2(pi / qi))
        .sum()
}

fn check_lengths(p: &Distribution, q: &Distribution) -> Result<()> {
    if p.len() != q.len() {
        return Err(Error::LengthMismatch {
            left: p.len(),
            right: q.len(),
        });
    }
    Ok(())
}

/// Kullback-Leibler divergence `D(p ‖ q)` in bits.
pub fn kl(p: &Distribution, q: &Distribution) -> Result<f64> {
    check_lengths(p, q)?;
    let (p, q) = (smooth(p.values()), smooth(q.values()));
    Ok(kl_raw(&p, &q).max(0.0))
}

/// Jensen-Shannon divergence in bits, in `[0, 1]`.
pub fn js(p: &Distribution, q: &Distribution) -> Result<f64> {
    check_lengths(p, q)?;
    Ok(js_smoothed(&smooth(p.values()), &smooth(q.values())))
}

fn js_smoothed(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    (0.5 * kl_raw(p, &m) + 0.5 * kl_raw(q, &m)).clamp(0.0, 1.0)
}

/// A symmetric matrix with unit diagonal and entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(Matrix);

impl SimilarityMatrix {
    /// Checks symmetry, the unit diagonal and the `[0, 1]` range.
    pub fn new(m: Matrix) -> Result<Self> {
        let n = m.rows();
        if m.cols() != n {
            return Err(Error::ShapeMismatch {
                op: "similarity",
                left: m.shape(),
                right: (n, n),
            });
        }
        for i in 0..n {
            if m[(i, i)] != 1.0 {
                return Err(Error::InvalidConfig(format!(
                    "similarity diagonal {i} is not 1"
                )));
            }
            for j in 0..n {
                let v = m[(i, j)];
                if !(0.0..=1.0).contains(&v) || v != m[(j, i)] {
                    return Err(Error::InvalidConfig(format!(
                        "similarity entry ({i},{j}) = {v} breaks symmetry or range"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn n(&self) -> usize {
        self.0.rows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn as_matrix(&self) -> &Matrix {
        &self.0
    }
}

/// Pairwise `1 − js` over `rows`.
pub fn similarity_matrix(rows: &[Distribution]) -> Result<SimilarityMatrix> {
    let n = rows.len();
    if let Some(bad) = rows.iter().find(|r| r.len() != rows[0].len()) {
        return Err(Error::LengthMismatch {
            left: bad.len(),
            right: rows[0].len(),
        });
    }
    let smoothed: Vec<Vec<f64>> = rows.iter().map(|r| smooth(r.values())).collect();
    let mut m = Matrix::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            let s = 1.0 - js_smoothed(&smoothed[i], &smoothed[j]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    Ok(SimilarityMatrix(m))
}

/// Pairwise cosine similarity of nonnegative rows; all-zero rows score 0
/// against everything but themselves.
pub fn cosine_similarity_matrix(rows: &Matrix) -> Result<SimilarityMatrix> {
    if rows.as_slice().iter().any(|x| !x.is_finite() || *x < 0.0) {
        return Err(Error::InvalidConfig(
            "cosine similarity needs nonnegative rows".into(),
        ));
    }
    let n = rows.rows();
    let norms: Vec<f64> = (0..n)
        .map(|i| libm::sqrt(rows.row(i).iter().map(|x| x * x).sum()))
        .collect();
    let mut m = Matrix::identity(n);
    for i in 0..n {
        for j in i + 1..n {
            let denom = norms[i] * norms[j];
            let s = if denom > 0.0 {
                let dot: f64 = rows
                    .row(i)
                    .iter()
                    .zip(rows.row(j))
                    .map(|(a, b)| a * b)
                    .sum();
                (dot / denom).clamp(0.0, 1.0)
            } else {
                0.0
            };
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
    Ok(SimilarityMatrix(m))
}
