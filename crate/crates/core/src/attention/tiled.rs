//! Streaming two-pass engine.
//!
//! Queries and keys are rotated once per token: at absolute positions for
//! the window pass, and at per-token split indices for the scaled pass.
//! Each logit takes the window pass when `rel <= w` and the scaled pass
//! otherwise; both feed a single online softmax that walks key tiles in
//! order. Clamped groups swap in a query rotated to the cap and an
//! unrotated key wherever the split index passes the cap.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::mem::size_of;

use super::{active_pairs, AttentionOutput, AttentionProblem, IndexRule, RowState};
use crate::maps::{PositionMap, SplitForm, SplitIndex};
use crate::rope::{rotate_pair, AngleTable};
use crate::tensor::HeadTensor;
use crate::{Error, Result};

pub const DEFAULT_TILE: usize = 128;

/// How a pair is indexed beyond the window.
#[derive(Debug, Clone, Copy, PartialEq)]
enum FarRule {
    Absolute,
    /// Query at a constant index, key unrotated.
    Constant(u32),
    Split(SplitIndex),
}

#[derive(Debug, Clone)]
struct ClampClass {
    pairs: Vec<usize>,
    /// Gathered scaled-pass vectors for `pairs`, `len x 2|pairs|`.
    qb: Vec<f32>,
    kb: Vec<f32>,
    /// Query rotated to the cap and the raw key, same layout.
    qc: Vec<f32>,
    kc: Vec<f32>,
    /// Keys `n < threshold[m]` are clamped for query `m`.
    threshold: Vec<u32>,
}

#[derive(Debug, Clone)]
struct FarPass {
    window: u32,
    qb: Vec<f32>,
    kb: Vec<f32>,
    clamps: Vec<ClampClass>,
    /// Max of the clamp thresholds per query.
    max_threshold: Vec<u32>,
}

/// Rotated vectors of one head, ready for streaming.
#[derive(Debug, Clone)]
pub struct TiledHead {
    qa: Vec<f32>,
    ka: Vec<f32>,
    far: Option<FarPass>,
}

fn far_rule(rule: IndexRule) -> Result<(FarRule, Option<u32>, Option<u32>)> {
    // (rule, window, cap)
    Ok(match rule {
        IndexRule::Relative(PositionMap::Standard) => (FarRule::Absolute, None, None),
        IndexRule::Relative(PositionMap::ReRope { window }) => (FarRule::Constant(window), Some(window), None),
        IndexRule::Relative(PositionMap::SelfExtend { window, group }) => (
            FarRule::Split(SplitIndex::new(group, window, SplitForm::GroupedOffset)?),
            Some(window),
            None,
        ),
        IndexRule::Relative(PositionMap::Dpe {
            scale,
            window,
            effective,
            clamp,
        }) => (
            FarRule::Split(SplitIndex::new(scale, window, SplitForm::Shifted)?),
            Some(window),
            clamp.then_some(effective),
        ),
        IndexRule::Split { split, cap } => (FarRule::Split(split), Some(split.window), cap),
        IndexRule::Relative(map @ PositionMap::Detection { .. }) => {
            return Err(Error::Problem(format!("map {map:?} has no per-token split form")));
        }
    })
}

fn rotate_into(out: &mut [f32], src: &[f32], j: usize, table: &AngleTable, index: u32) {
    let (c, s) = table.get(index, j);
    let (y0, y1) = rotate_pair(src[2 * j] as f64, src[2 * j + 1] as f64, c, s);
    out[2 * j] = y0 as f32;
    out[2 * j + 1] = y1 as f32;
}

impl TiledHead {
    pub fn new(problem: &AttentionProblem, head: usize) -> Result<Self> {
        let (len, d) = (problem.seq_len(), problem.head_dim());
        let num_pairs = d / 2;
        let active = active_pairs(problem, head);
        let classes = problem.scheme.classes(head, num_pairs);

        let mut rules = vec![FarRule::Absolute; num_pairs];
        let mut caps: Vec<(Vec<usize>, SplitIndex, u32)> = Vec::new();
        let mut window: Option<u32> = None;
        let mut max_index = len.saturating_sub(1) as u32;
        for class in &classes {
            let (rule, w, cap) = far_rule(class.rule)?;
            if let Some(w) = w {
                if window.is_some_and(|cur| cur != w) {
                    return Err(Error::Problem("tiled engine needs one shared window".into()));
                }
                window = Some(w);
                max_index = max_index.max(w);
            }
            if let Some(c) = cap {
                max_index = max_index.max(c);
            }
            let pairs: Vec<usize> = class.pairs.iter().copied().filter(|&j| active[j]).collect();
            for &j in &pairs {
                rules[j] = rule;
            }
            if let (FarRule::Split(split), Some(c)) = (rule, cap) {
                if !pairs.is_empty() {
                    caps.push((pairs, split, c));
                }
            }
        }
        for rule in &rules {
            if let FarRule::Split(split) = rule {
                max_index = max_index.max(split.query_index(len.saturating_sub(1) as u32));
            }
        }
        let table = AngleTable::new(&problem.basis, max_index);

        let mut qa = vec![0.0f32; len * d];
        let mut ka = vec![0.0f32; len * d];
        for pos in 0..len {
            let q = problem.queries.row(head, pos);
            let k = problem.keys.row(head, pos);
            for j in (0..num_pairs).filter(|&j| active[j]) {
                rotate_into(&mut qa[pos * d..(pos + 1) * d], q, j, &table, pos as u32);
                rotate_into(&mut ka[pos * d..(pos + 1) * d], k, j, &table, pos as u32);
            }
        }

        let far = match window {
            None => None,
            Some(window) => {
                let mut qb = qa.clone();
                let mut kb = ka.clone();
                for pos in 0..len {
                    let q = problem.queries.row(head, pos);
                    let k = problem.keys.row(head, pos);
                    let (qrow, krow) = (&mut qb[pos * d..(pos + 1) * d], &mut kb[pos * d..(pos + 1) * d]);
                    for (j, rule) in rules.iter().enumerate() {
                        match *rule {
                            FarRule::Absolute => {}
                            FarRule::Constant(c) => {
                                rotate_into(qrow, q, j, &table, c);
                                krow[2 * j..2 * j + 2].copy_from_slice(&k[2 * j..2 * j + 2]);
                            }
                            FarRule::Split(split) => {
                                rotate_into(qrow, q, j, &table, split.query_index(pos as u32));
                                rotate_into(krow, k, j, &table, split.key_index(pos as u32));
                            }
                        }
                    }
                }
                let clamps: Vec<ClampClass> = caps
                    .into_iter()
                    .map(|(pairs, split, cap)| {
                        let w2 = 2 * pairs.len();
                        let mut class = ClampClass {
                            qb: vec![0.0; len * w2],
                            kb: vec![0.0; len * w2],
                            qc: vec![0.0; len * w2],
                            kc: vec![0.0; len * w2],
                            threshold: vec![0; len],
                            pairs,
                        };
                        let mut rotated = vec![0.0f32; d];
                        for pos in 0..len {
                            let q = problem.queries.row(head, pos);
                            let k = problem.keys.row(head, pos);
                            for (t, &j) in class.pairs.iter().enumerate() {
                                let o = pos * w2 + 2 * t;
                                class.qb[o..o + 2].copy_from_slice(&qb[pos * d + 2 * j..pos * d + 2 * j + 2]);
                                class.kb[o..o + 2].copy_from_slice(&kb[pos * d + 2 * j..pos * d + 2 * j + 2]);
                                rotate_into(&mut rotated, q, j, &table, cap);
                                class.qc[o..o + 2].copy_from_slice(&rotated[2 * j..2 * j + 2]);
                                class.kc[o..o + 2].copy_from_slice(&k[2 * j..2 * j + 2]);
                            }
                            let qi = split.query_index(pos as u32);
                            class.threshold[pos] = if qi > cap {
                                ((qi - cap) as u64 * split.scale as u64).min(len as u64) as u32
                            } else {
                                0
                            };
                        }
                        class
                    })
                    .collect();
                let max_threshold = (0..len)
                    .map(|m| clamps.iter().map(|c| c.threshold[m]).max().unwrap_or(0))
                    .collect();
                Some(FarPass {
                    window,
                    qb,
                    kb,
                    clamps,
                    max_threshold,
                })
            }
        };
        Ok(Self { qa, ka, far })
    }

    /// Bytes held by the prepared buffers.
    pub fn scratch_bytes(&self) -> usize {
        let f = size_of::<f32>();
        let mut total = (self.qa.len() + self.ka.len()) * f;
        if let Some(far) = &self.far {
            total += (far.qb.len() + far.kb.len()) * f + far.max_threshold.len() * size_of::<u32>();
            for c in &far.clamps {
                total += (c.qb.len() + c.kb.len() + c.qc.len() + c.kc.len()) * f + c.threshold.len() * size_of::<u32>();
            }
        }
        total
    }
}

#[inline]
fn dot(a: &[f32], b: &[f32]) -> f32 {
    let mut lanes = [0.0f32; 8];
    let chunks = a.len() / 8;
    for (ca, cb) in a[..chunks * 8].chunks_exact(8).zip(b[..chunks * 8].chunks_exact(8)) {
        for i in 0..8 {
            lanes[i] += ca[i] * cb[i];
        }
    }
    let mut tail = 0.0;
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    lanes.iter().sum::<f32>() + tail
}

/// Tiled engine over a problem whose heads have been prepared.
#[derive(Debug)]
pub struct TiledEngine<'a> {
    problem: &'a AttentionProblem,
    tile: usize,
    heads: Vec<TiledHead>,
    scale: f64,
}

impl<'a> TiledEngine<'a> {
    pub fn new(problem: &'a AttentionProblem, tile: usize) -> Result<Self> {
        problem.validate()?;
        let heads = (0..problem.num_heads())
            .map(|h| TiledHead::new(problem, h))
            .collect::<Result<Vec<_>>>()?;
        Self::from_heads(problem, tile, heads)
    }

    /// Assemble from heads prepared elsewhere (e.g. in parallel).
    pub fn from_heads(problem: &'a AttentionProblem, tile: usize, heads: Vec<TiledHead>) -> Result<Self> {
        if tile == 0 {
            return Err(Error::Problem("tile size must be at least 1".into()));
        }
        if heads.len() != problem.num_heads() {
            return Err(Error::Problem(format!(
                "{} prepared heads for {} heads",
                heads.len(),
                problem.num_heads()
            )));
        }
        Ok(Self {
            problem,
            tile,
            heads,
            scale: problem.effective_scale(),
        })
    }

    pub fn tile(&self) -> usize {
        self.tile
    }

    pub fn num_query_tiles(&self) -> usize {
        self.problem.seq_len().div_ceil(self.tile)
    }

    pub fn scratch_bytes(&self) -> usize {
        self.heads.iter().map(TiledHead::scratch_bytes).sum::<usize>()
            + self.tile * (self.tile + self.problem.value_dim()) * size_of::<f64>()
    }

    #[inline]
    fn logit(&self, head: &TiledHead, m: usize, n: usize) -> f64 {
        let d = self.problem.head_dim();
        let raw = match &head.far {
            Some(far) if (m - n) as u32 > far.window => {
                let mut v = dot(&far.qb[m * d..(m + 1) * d], &far.kb[n * d..(n + 1) * d]);
                if (n as u32) < far.max_threshold[m] {
                    for c in &far.clamps {
                        if (n as u32) < c.threshold[m] {
                            let w2 = 2 * c.pairs.len();
                            let (qs, ks) = (m * w2..(m + 1) * w2, n * w2..(n + 1) * w2);
                            v += dot(&c.qc[qs.clone()], &c.kc[ks.clone()]) - dot(&c.qb[qs], &c.kb[ks]);
                        }
                    }
                }
                v
            }
            _ => dot(&head.qa[m * d..(m + 1) * d], &head.ka[n * d..(n + 1) * d]),
        };
        raw as f64 * self.scale
    }

    /// Output rows of query tile `tile_index` of `head`, written to `out`
    /// (`tile_rows * value_dim`, the last tile may be shorter).
    pub fn run_tile(&self, head: usize, tile_index: usize, out: &mut [f32]) {
        let p = self.problem;
        let (len, dv) = (p.seq_len(), p.value_dim());
        let prepared = &self.heads[head];
        let m0 = tile_index * self.tile;
        let m1 = (m0 + self.tile).min(len);
        let mut states: Vec<RowState> = (m0..m1).map(|_| RowState::new(dv)).collect();
        let mut logits = vec![0.0f64; self.tile];
        let mut block = vec![0.0f32; dv];
        let mut n0 = 0;
        while n0 < m1 {
            let n1 = (n0 + self.tile).min(m1);
            for (state, m) in states.iter_mut().zip(m0..m1) {
                let end = n1.min(m + 1);
                if end <= n0 {
                    continue;
                }
                for (slot, n) in logits.iter_mut().zip(n0..end) {
                    *slot = self.logit(prepared, m, n);
                }
                state.absorb_blocked(&logits[..end - n0], (n0..end).map(|n| p.values.row(head, n)), &mut block);
            }
            n0 = n1;
        }
        for (r, state) in states.iter().enumerate() {
            state.write(&mut out[r * dv..(r + 1) * dv]);
        }
    }

    /// All rows of one head into `out` (`len * value_dim`).
    pub fn run_head(&self, head: usize, out: &mut [f32]) {
        let chunk = self.tile * self.problem.value_dim();
        if chunk == 0 {
            return;
        }
        for (t, block) in out.chunks_mut(chunk).enumerate() {
            self.run_tile(head, t, block);
        }
    }
}

pub fn attend_tiled(problem: &AttentionProblem, tile: usize) -> Result<AttentionOutput> {
    let engine = TiledEngine::new(problem, tile)?;
    let mut output = HeadTensor::zeros(problem.num_heads(), problem.seq_len(), problem.value_dim());
    for head in 0..problem.num_heads() {
        engine.run_head(head, output.head_mut(head));
    }
    Ok(AttentionOutput { output, logits: None })
}
