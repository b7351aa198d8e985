//! 2-norm attention contribution per frequency pair and top-k key-pair
//! selection.
//!
//! `|<q_j, k_j>| <= |q_j| |k_j|` bounds how much pair `j` can move a logit,
//! so pairs are ranked per head by the mean of that bound over a sequence.

use alloc::format;
use alloc::vec::Vec;

use crate::tensor::HeadTensor;
use crate::{Error, Result};

/// How the per-pair norms are averaged over positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum NormMode {
    /// `mean_m |q_m^(j)| * mean_n |k_n^(j)|`.
    #[default]
    Factored,
    /// `mean_m (|q_m^(j)| * |k_m^(j)|)`.
    Joint,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormProfile {
    num_heads: usize,
    num_pairs: usize,
    scores: Vec<f64>,
    sample_count: usize,
}

impl NormProfile {
    pub fn from_scores(num_heads: usize, num_pairs: usize, scores: Vec<f64>, sample_count: usize) -> Result<Self> {
        if scores.len() != num_heads * num_pairs {
            return Err(Error::LengthMismatch {
                what: "norm scores",
                expected: num_heads * num_pairs,
                actual: scores.len(),
            });
        }
        if sample_count == 0 {
            return Err(Error::Empty("norm profile samples"));
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite() || **s < 0.0) {
            return Err(Error::Problem(format!("norm score {s} is not a finite non-negative value")));
        }
        Ok(Self {
            num_heads,
            num_pairs,
            scores,
            sample_count,
        })
    }

    pub fn num_heads(&self) -> usize {
        self.num_heads
    }

    pub fn num_pairs(&self) -> usize {
        self.num_pairs
    }

    pub fn sample_count(&self) -> usize {
        self.sample_count
    }

    pub fn score(&self, head: usize, pair: usize) -> f64 {
        self.scores[head * self.num_pairs + pair]
    }

    pub fn head_scores(&self, head: usize) -> &[f64] {
        &self.scores[head * self.num_pairs..(head + 1) * self.num_pairs]
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }
}

#[inline]
fn pair_norm(v: &[f32], j: usize) -> f64 {
    libm::hypot(v[2 * j] as f64, v[2 * j + 1] as f64)
}

pub fn collect_norms(queries: &HeadTensor, keys: &HeadTensor, mode: NormMode) -> Result<NormProfile> {
    if queries.shape() != keys.shape() {
        return Err(Error::Problem(format!(
            "query shape {:?} does not match key shape {:?}",
            queries.shape(),
            keys.shape()
        )));
    }
    let [heads, len, dim] = queries.shape();
    if len == 0 || heads == 0 {
        return Err(Error::Empty("query/key sequence"));
    }
    if dim < 2 || dim % 2 != 0 {
        return Err(Error::HeadDim(dim));
    }
    let num_pairs = dim / 2;
    let mut scores = Vec::with_capacity(heads * num_pairs);
    for h in 0..heads {
        for j in 0..num_pairs {
            let score = match mode {
                NormMode::Factored => {
                    let q: f64 = (0..len).map(|m| pair_norm(queries.row(h, m), j)).sum();
                    let k: f64 = (0..len).map(|n| pair_norm(keys.row(h, n), j)).sum();
                    (q / len as f64) * (k / len as f64)
                }
                NormMode::Joint => {
                    let s: f64 = (0..len)
                        .map(|m| pair_norm(queries.row(h, m), j) * pair_norm(keys.row(h, m), j))
                        .sum();
                    s / len as f64
                }
            };
            scores.push(score);
        }
    }
    NormProfile::from_scores(heads, num_pairs, scores, len)
}

/// Indices of the `k` highest-scoring pairs of every head, ascending. Equal
/// scores go to the lower pair index.
pub fn select_key_dims(profile: &NormProfile, k: usize) -> Result<Vec<Vec<usize>>> {
    if k > profile.num_pairs {
        return Err(Error::TopK {
            k,
            max: profile.num_pairs,
        });
    }
    Ok((0..profile.num_heads)
        .map(|h| {
            let scores = profile.head_scores(h);
            let mut order: Vec<usize> = (0..profile.num_pairs).collect();
            order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
            let mut chosen = order[..k].to_vec();
            chosen.sort_unstable();
            chosen
        })
        .collect())
}
