//! Causal multi-head attention under per-pair position maps.
//!
//! Both engines score a query at position `m` against a key at `n <= m` as
//! `sum_j q_j^T R(-theta_j * idx_j(m, n)) k_j`, i.e. the query rotated to
//! index `idx_j` and the key left at zero, which with the standard map is
//! exactly absolute-position rotary attention.
//!
//! [`exact`] evaluates every relative index directly from tabulated angles.
//! [`tiled`] streams key tiles through an online softmax and realizes
//! scaled maps by rotating queries and keys at per-token split indices,
//! merging a window pass and a scaled pass under one softmax.

pub mod exact;
pub mod tiled;

use alloc::format;
use alloc::vec::Vec;

use crate::maps::{DimensionPlan, PositionMap, SplitForm, SplitIndex};
use crate::rope::FrequencyBasis;
use crate::tensor::HeadTensor;
use crate::{Error, GroupLayout, Result};

pub use exact::{attend_exact, attend_exact_with, ExactEngine, ExactOptions, DEFAULT_EXACT_CAP};
pub use tiled::{attend_tiled, TiledEngine, TiledHead, DEFAULT_TILE};

/// Which index each (head, pair) uses for a query/key position pair.
#[derive(Debug, Clone, PartialEq)]
pub enum PositionScheme {
    /// The same map for every pair of every head.
    Uniform(PositionMap),
    /// One map per contiguous pair group, shared by all heads.
    Grouped(Vec<PositionMap>),
    /// Dimension plan evaluated with its exact relative maps.
    Plan(DimensionPlan),
    /// Dimension plan with key pairs indexed by per-token split indices
    /// beyond the window (what the tiled engine computes).
    SplitPlan { plan: DimensionPlan, form: SplitForm },
}

/// Index rule for a class of pairs within one head.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum IndexRule {
    Relative(PositionMap),
    /// `rel` within the window, otherwise `min(split.relative(m, n), cap)`.
    Split { split: SplitIndex, cap: Option<u32> },
}

impl IndexRule {
    #[inline]
    pub(crate) fn index(&self, m: u32, n: u32) -> u32 {
        let rel = m - n;
        match *self {
            IndexRule::Relative(map) => map.apply(rel),
            IndexRule::Split { split, cap } => {
                if rel <= split.window {
                    rel
                } else {
                    let v = split.relative(m, n);
                    cap.map_or(v, |c| v.min(c))
                }
            }
        }
    }
}

/// Pairs of one head that share an index rule.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PairClass {
    pub(crate) rule: IndexRule,
    pub(crate) pairs: Vec<usize>,
}

fn push_pair(classes: &mut Vec<PairClass>, rule: IndexRule, pair: usize) {
    match classes.iter_mut().find(|c| c.rule == rule) {
        Some(c) => c.pairs.push(pair),
        None => classes.push(PairClass {
            rule,
            pairs: alloc::vec![pair],
        }),
    }
}

impl PositionScheme {
    pub fn validate(&self, num_heads: usize, head_dim: usize) -> Result<()> {
        let num_pairs = head_dim / 2;
        match self {
            PositionScheme::Uniform(map) => map.validate(),
            PositionScheme::Grouped(maps) => {
                GroupLayout::new(num_pairs, maps.len())?;
                maps.iter().try_for_each(PositionMap::validate)
            }
            PositionScheme::Plan(plan) | PositionScheme::SplitPlan { plan, .. } => {
                plan.validate()?;
                if plan.head_dim != head_dim {
                    return Err(Error::Problem(format!(
                        "plan head dimension {} does not match {head_dim}",
                        plan.head_dim
                    )));
                }
                if plan.num_heads() != num_heads {
                    return Err(Error::Problem(format!(
                        "plan covers {} heads, problem has {num_heads}",
                        plan.num_heads()
                    )));
                }
                Ok(())
            }
        }
    }

    pub(crate) fn classes(&self, head: usize, num_pairs: usize) -> Vec<PairClass> {
        let mut classes = Vec::new();
        match self {
            PositionScheme::Uniform(map) => {
                classes.push(PairClass {
                    rule: IndexRule::Relative(*map),
                    pairs: (0..num_pairs).collect(),
                });
            }
            PositionScheme::Grouped(maps) => {
                let layout = GroupLayout::new(num_pairs, maps.len()).expect("validated layout");
                for (g, map) in maps.iter().enumerate() {
                    for pair in layout.pairs(g) {
                        push_pair(&mut classes, IndexRule::Relative(*map), pair);
                    }
                }
            }
            PositionScheme::Plan(plan) => {
                for pair in 0..num_pairs {
                    push_pair(&mut classes, IndexRule::Relative(plan.pair_map(head, pair)), pair);
                }
            }
            PositionScheme::SplitPlan { plan, form } => {
                let layout = plan.layout();
                for pair in 0..num_pairs {
                    let rule = if plan.is_key(head, pair) {
                        let g = layout.group_of(pair);
                        IndexRule::Split {
                            split: plan.split_index(g, *form),
                            cap: plan.clamp.then_some(plan.effective_lengths[g]),
                        }
                    } else {
                        IndexRule::Relative(PositionMap::Standard)
                    };
                    push_pair(&mut classes, rule, pair);
                }
            }
        }
        classes
    }
}

/// Queries, keys and values (`heads x len x dim`) plus everything that
/// fixes their positional treatment. Attention is always causal.
#[derive(Debug, Clone)]
pub struct AttentionProblem {
    pub queries: HeadTensor,
    pub keys: HeadTensor,
    pub values: HeadTensor,
    pub basis: FrequencyBasis,
    pub scheme: PositionScheme,
    /// Multiplies every logit; `1/sqrt(d)` by default.
    pub logit_scale: f64,
}

impl AttentionProblem {
    pub fn new(
        queries: HeadTensor,
        keys: HeadTensor,
        values: HeadTensor,
        basis: FrequencyBasis,
        scheme: PositionScheme,
    ) -> Result<Self> {
        let logit_scale = 1.0 / libm::sqrt(basis.head_dim() as f64);
        let problem = Self {
            queries,
            keys,
            values,
            basis,
            scheme,
            logit_scale,
        };
        problem.validate()?;
        Ok(problem)
    }

    pub fn with_logit_scale(mut self, scale: f64) -> Self {
        self.logit_scale = scale;
        self
    }

    pub fn num_heads(&self) -> usize {
        self.queries.heads()
    }

    pub fn seq_len(&self) -> usize {
        self.queries.len()
    }

    pub fn head_dim(&self) -> usize {
        self.queries.dim()
    }

    pub fn value_dim(&self) -> usize {
        self.values.dim()
    }

    pub(crate) fn effective_scale(&self) -> f64 {
        self.logit_scale * self.basis.logit_multiplier()
    }

    pub fn validate(&self) -> Result<()> {
        let [h, l, d] = self.queries.shape();
        if d != self.basis.head_dim() {
            return Err(Error::Problem(format!(
                "query dimension {d} does not match basis head dimension {}",
                self.basis.head_dim()
            )));
        }
        if self.keys.shape() != [h, l, d] {
            return Err(Error::Problem(format!(
                "key shape {:?} does not match query shape {:?}",
                self.keys.shape(),
                [h, l, d]
            )));
        }
        if self.values.heads() != h || self.values.len() != l {
            return Err(Error::Problem(format!(
                "value shape {:?} does not match {h} heads x {l} positions",
                self.values.shape()
            )));
        }
        if l > u32::MAX as usize {
            return Err(Error::Problem("sequence too long for u32 positions".into()));
        }
        if !self.logit_scale.is_finite() {
            return Err(Error::NonFinite("logit scale"));
        }
        for (name, t) in [("queries", &self.queries), ("keys", &self.keys), ("values", &self.values)] {
            if !t.all_finite() {
                return Err(Error::NonFinite(name));
            }
        }
        self.scheme.validate(h, d)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionOutput {
    pub output: HeadTensor,
    /// `heads x len x len` scaled logits with `-inf` above the diagonal;
    /// exact engine only, on request.
    pub logits: Option<HeadTensor>,
}

/// Online-softmax state for one query row.
#[derive(Debug, Clone)]
pub(crate) struct RowState {
    max: f64,
    sum: f64,
    acc: Vec<f64>,
}

impl RowState {
    pub(crate) fn new(dv: usize) -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            acc: alloc::vec![0.0; dv],
        }
    }

    pub(crate) fn reset(&mut self) {
        self.max = f64::NEG_INFINITY;
        self.sum = 0.0;
        self.acc.iter_mut().for_each(|a| *a = 0.0);
    }

    /// Fold a block of logits and their value rows into the state.
    pub(crate) fn absorb<'v>(&mut self, logits: &[f64], values: impl Iterator<Item = &'v [f32]>) {
        let block_max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if block_max > self.max {
            let factor = libm::exp(self.max - block_max);
            self.sum *= factor;
            self.acc.iter_mut().for_each(|a| *a *= factor);
            self.max = block_max;
        }
        for (&l, v) in logits.iter().zip(values) {
            let p = libm::exp(l - self.max);
            self.sum += p;
            for (a, &x) in self.acc.iter_mut().zip(v) {
                *a += p * x as f64;
            }
        }
    }

    /// [`RowState::absorb`] with the block's weighted values summed in `f32`
    /// lanes before folding into the `f64` accumulator. `block` is scratch of
    /// length `dv`.
    pub(crate) fn absorb_blocked<'v>(
        &mut self,
        logits: &[f64],
        values: impl Iterator<Item = &'v [f32]>,
        block: &mut [f32],
    ) {
        let block_max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if block_max > self.max {
            let factor = libm::exp(self.max - block_max);
            self.sum *= factor;
            self.acc.iter_mut().for_each(|a| *a *= factor);
            self.max = block_max;
        }
        block.iter_mut().for_each(|b| *b = 0.0);
        for (&l, v) in logits.iter().zip(values) {
            let p = libm::exp(l - self.max);
            self.sum += p;
            let pf = p as f32;
            for (b, &x) in block.iter_mut().zip(v) {
                *b += pf * x;
            }
        }
        for (a, &b) in self.acc.iter_mut().zip(block.iter()) {
            *a += b as f64;
        }
    }

    pub(crate) fn write(&self, out: &mut [f32]) {
        let inv = 1.0 / self.sum;
        for (o, &a) in out.iter_mut().zip(&self.acc) {
            *o = (a * inv) as f32;
        }
    }
}

/// Pairs with a zero query or zero key sub-vector at every position of the
/// head contribute nothing and are skipped.
pub(crate) fn active_pairs(problem: &AttentionProblem, head: usize) -> Vec<bool> {
    let num_pairs = problem.head_dim() / 2;
    let mut q_active = alloc::vec![false; num_pairs];
    let mut k_active = alloc::vec![false; num_pairs];
    for pos in 0..problem.seq_len() {
        let q = problem.queries.row(head, pos);
        let k = problem.keys.row(head, pos);
        for j in 0..num_pairs {
            q_active[j] |= q[2 * j] != 0.0 || q[2 * j + 1] != 0.0;
            k_active[j] |= k[2 * j] != 0.0 || k[2 * j + 1] != 0.0;
        }
    }
    q_active.iter().zip(&k_active).map(|(a, b)| *a && *b).collect()
}
