//! Reference engine: every logit evaluated from tabulated `cos`/`sin` of
//! the exact per-pair index, in double precision.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use super::{active_pairs, AttentionOutput, AttentionProblem, IndexRule, PairClass, RowState};
use crate::rope::pair_score;
use crate::tensor::HeadTensor;
use crate::{Error, Result};

pub const DEFAULT_EXACT_CAP: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExactOptions {
    pub max_len: usize,
    pub keep_logits: bool,
}

impl Default for ExactOptions {
    fn default() -> Self {
        Self {
            max_len: DEFAULT_EXACT_CAP,
            keep_logits: false,
        }
    }
}

/// Angles for one class, addressed by slot.
#[derive(Debug, Clone)]
struct ClassTable {
    rule: IndexRule,
    pairs: Vec<usize>,
    /// For relative rules, `slot_of_rel[rel]`; split rules address slots by
    /// index value directly.
    slot_of_rel: Option<Vec<u32>>,
    /// `(cos, -sin)` per slot per pair.
    angles: Vec<(f64, f64)>,
}

impl ClassTable {
    fn new(class: PairClass, thetas: &[f64], len: usize) -> Self {
        let PairClass { rule, pairs } = class;
        let (slot_of_rel, indices) = match rule {
            IndexRule::Relative(map) => {
                let mut values: Vec<u32> = map.table(len);
                let per_rel = values.clone();
                values.sort_unstable();
                values.dedup();
                let slots = per_rel
                    .iter()
                    .map(|v| values.binary_search(v).expect("value present") as u32)
                    .collect();
                (Some(slots), values)
            }
            IndexRule::Split { split, cap } => {
                let last = len.saturating_sub(1) as u32;
                let mut max = split.window.min(last).max(split.query_index(last));
                if let Some(c) = cap {
                    max = max.min(c.max(split.window.min(last)));
                }
                (None, (0..=max).collect())
            }
        };
        let mut angles = Vec::with_capacity(indices.len() * pairs.len());
        for &idx in &indices {
            for &j in &pairs {
                let a = idx as f64 * thetas[j];
                angles.push((libm::cos(a), -libm::sin(a)));
            }
        }
        Self {
            rule,
            pairs,
            slot_of_rel,
            angles,
        }
    }

    #[inline]
    fn slot(&self, m: u32, n: u32) -> usize {
        match &self.slot_of_rel {
            Some(slots) => slots[(m - n) as usize] as usize,
            None => self.rule.index(m, n) as usize,
        }
    }
}

/// Per-head precomputation for the exact engine.
#[derive(Debug, Clone)]
pub struct ExactEngine<'a> {
    problem: &'a AttentionProblem,
    heads: Vec<Vec<ClassTable>>,
    scale: f64,
}

impl<'a> ExactEngine<'a> {
    pub fn new(problem: &'a AttentionProblem, max_len: usize) -> Result<Self> {
        problem.validate()?;
        let len = problem.seq_len();
        if len > max_len {
            return Err(Error::SequenceTooLong { len, cap: max_len });
        }
        let num_pairs = problem.head_dim() / 2;
        let thetas = problem.basis.thetas();
        let heads = (0..problem.num_heads())
            .map(|h| {
                let active = active_pairs(problem, h);
                problem
                    .scheme
                    .classes(h, num_pairs)
                    .into_iter()
                    .filter_map(|mut c| {
                        c.pairs.retain(|&j| active[j]);
                        (!c.pairs.is_empty()).then(|| ClassTable::new(c, thetas, len))
                    })
                    .collect()
            })
            .collect();
        Ok(Self {
            problem,
            heads,
            scale: problem.effective_scale(),
        })
    }

    /// Scaled logit of query `m` against key `n <= m`.
    #[inline]
    fn logit(&self, head: usize, q: &[f64], k: &[f64], m: u32, n: u32) -> f64 {
        let mut acc = 0.0;
        for class in &self.heads[head] {
            let base = class.slot(m, n) * class.pairs.len();
            for (t, &j) in class.pairs.iter().enumerate() {
                let (c, s) = class.angles[base + t];
                acc += pair_score(q[2 * j], q[2 * j + 1], k[2 * j], k[2 * j + 1], c, s);
            }
        }
        acc * self.scale
    }

    /// Output rows `rows` of `head` into `out` (`rows.len() * value_dim`),
    /// and their logit rows into `logits` (`rows.len() * len`) if given.
    pub fn run_rows(&self, head: usize, rows: Range<usize>, out: &mut [f32], mut logits: Option<&mut [f32]>) {
        let p = self.problem;
        let (len, d, dv) = (p.seq_len(), p.head_dim(), p.value_dim());
        let to_f64 = |t: &HeadTensor| -> Vec<f64> { t.head(head).iter().map(|&x| x as f64).collect() };
        let keys = to_f64(&p.keys);
        let mut state = RowState::new(dv);
        let mut row_logits = vec![0.0f64; len];
        for (r, m) in rows.enumerate() {
            let q: Vec<f64> = p.queries.row(head, m).iter().map(|&x| x as f64).collect();
            for n in 0..=m {
                row_logits[n] = self.logit(head, &q, &keys[n * d..(n + 1) * d], m as u32, n as u32);
            }
            state.reset();
            state.absorb(&row_logits[..=m], (0..=m).map(|n| p.values.row(head, n)));
            state.write(&mut out[r * dv..(r + 1) * dv]);
            if let Some(l) = logits.as_deref_mut() {
                let row = &mut l[r * len..(r + 1) * len];
                for (n, slot) in row.iter_mut().enumerate() {
                    *slot = if n <= m { row_logits[n] as f32 } else { f32::NEG_INFINITY };
                }
            }
        }
    }
}

pub fn attend_exact(problem: &AttentionProblem) -> Result<AttentionOutput> {
    attend_exact_with(problem, ExactOptions::default())
}

pub fn attend_exact_with(problem: &AttentionProblem, options: ExactOptions) -> Result<AttentionOutput> {
    let engine = ExactEngine::new(problem, options.max_len)?;
    let (h, len, dv) = (problem.num_heads(), problem.seq_len(), problem.value_dim());
    let mut output = HeadTensor::zeros(h, len, dv);
    let mut logits = options.keep_logits.then(|| HeadTensor::zeros(h, len, len));
    for head in 0..h {
        let l = logits.as_mut().map(|t| t.head_mut(head));
        engine.run_rows(head, 0..len, output.head_mut(head), l);
    }
    Ok(AttentionOutput { output, logits })
}
