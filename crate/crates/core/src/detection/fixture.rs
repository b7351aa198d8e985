//! Two-layer attention-only transformer with hand-set induction weights,
//! used as a desk-scale model for retrieval under position maps.
//!
//! Residual stream layout (`P` needle keys, `V` values):
//!
//! | slice      | width | contents                                  |
//! |------------|-------|-------------------------------------------|
//! | `const`    | 1     | always 1                                  |
//! | `tok_key`  | P     | one-hot needle key of the current token   |
//! | `tok_val`  | V     | one-hot value of the current token        |
//! | `prev_key` | P     | written by layer 1                        |
//! | `out`      | V     | written by layer 2, read by the unembed   |
//!
//! Layer 1 is a previous-token head: a constant query and key on the
//! `prev_pairs` highest-frequency pairs, with the query pre-rotated by one
//! step so that `sum_j cos((rel - 1) theta_j)` peaks at `rel = 1`. It copies
//! the needle-key code of the previous token into `prev_key`.
//!
//! Layer 2 matches the current token's key code against `prev_key` on
//! pairs `match_pair_start..match_pair_start + P` (one pair per needle
//! key) and copies the value of the matching position into `out`. The
//! match score decays as `cos(rel * theta)` on those pairs, so retrieval
//! holds while the rotation stays within the angles covered up to
//! `train_length` and fails beyond.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::ops::Range;

use rand::Rng;

use super::niah::{generate_niah, SyntheticNiahTask, Vocab};
use super::{DetectionCell, Evaluator};
use crate::attention::{AttentionProblem, ExactEngine, PositionScheme};
use crate::maps::PositionMap;
use crate::rope::{FrequencyBasis, Scaling};
use crate::tensor::HeadTensor;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct FixtureSpec {
    pub head_dim: usize,
    pub base: f64,
    pub vocab: Vocab,
    pub prev_pairs: usize,
    pub prev_gain: f64,
    pub match_pair_start: usize,
    pub match_gain: f64,
    /// Longest context the weights are designed for.
    pub train_length: u32,
}

impl Default for FixtureSpec {
    fn default() -> Self {
        Self {
            head_dim: 128,
            base: crate::rope::DEFAULT_BASE,
            vocab: Vocab::default(),
            prev_pairs: 8,
            prev_gain: 12.0,
            match_pair_start: 44,
            match_gain: 12.0,
            train_length: 512,
        }
    }
}

#[derive(Debug, Clone)]
struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    /// `x . M` for each row of `x` (`n x rows`), giving `n x cols`.
    fn apply(&self, x: &[f32]) -> Vec<f32> {
        let n = x.len() / self.rows;
        let mut out = vec![0.0f32; n * self.cols];
        for i in 0..n {
            let xi = &x[i * self.rows..(i + 1) * self.rows];
            let oi = &mut out[i * self.cols..(i + 1) * self.cols];
            for (r, &xv) in xi.iter().enumerate() {
                if xv == 0.0 {
                    continue;
                }
                for (o, &w) in oi.iter_mut().zip(&self.data[r * self.cols..(r + 1) * self.cols]) {
                    *o += xv * w;
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
struct Layer {
    wq: Matrix,
    wk: Matrix,
    wv: Matrix,
    wo: Matrix,
}

#[derive(Debug, Clone)]
struct Slices {
    tok_key: usize,
    tok_val: usize,
    prev_key: usize,
    out: usize,
    width: usize,
}

impl Slices {
    fn new(vocab: &Vocab) -> Self {
        let (p, v) = (vocab.needle_keys as usize, vocab.values as usize);
        Self {
            tok_key: 1,
            tok_val: 1 + p,
            prev_key: 1 + p + v,
            out: 1 + 2 * p + v,
            width: 1 + 2 * p + 2 * v,
        }
    }
}

/// Basis and per-layer position schemes for one evaluation method.
#[derive(Debug, Clone, PartialEq)]
pub struct MethodSetup {
    pub basis: FrequencyBasis,
    pub schemes: [PositionScheme; 2],
}

impl MethodSetup {
    pub fn uniform(basis: FrequencyBasis, map: PositionMap) -> Self {
        Self {
            basis,
            schemes: [PositionScheme::Uniform(map), PositionScheme::Uniform(map)],
        }
    }
}

/// Raw (unrotated) query and key projections of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerActivations {
    pub queries: HeadTensor,
    pub keys: HeadTensor,
}

#[derive(Debug, Clone)]
pub struct FixtureModel {
    spec: FixtureSpec,
    basis: FrequencyBasis,
    slices: Slices,
    embed: Matrix,
    layers: [Layer; 2],
    unembed: Matrix,
}

pub fn build_fixture_model(spec: FixtureSpec) -> Result<FixtureModel> {
    let basis = FrequencyBasis::new(spec.head_dim, spec.base, Scaling::None)?;
    let num_pairs = basis.num_pairs();
    let vocab = spec.vocab;
    let (p, v) = (vocab.needle_keys as usize, vocab.values as usize);
    let inconsistent = |msg: String| Err(Error::Fixture(msg));
    if p == 0 || v == 0 || vocab.filler_keys == 0 {
        return inconsistent("vocabulary needs needle keys, filler keys and values".into());
    }
    if spec.prev_pairs == 0 || spec.prev_pairs > spec.match_pair_start {
        return inconsistent(format!(
            "previous-token pairs 0..{} must be non-empty and precede the match pairs at {}",
            spec.prev_pairs, spec.match_pair_start
        ));
    }
    if spec.match_pair_start + p > num_pairs {
        return inconsistent(format!(
            "match pairs {}..{} exceed {num_pairs} pairs",
            spec.match_pair_start,
            spec.match_pair_start + p
        ));
    }
    if p > spec.head_dim || v > spec.head_dim {
        return inconsistent("value and key codes must fit in the head dimension".into());
    }
    for (name, g) in [("prev_gain", spec.prev_gain), ("match_gain", spec.match_gain)] {
        if !g.is_finite() || g <= 0.0 {
            return inconsistent(format!("{name} must be finite and positive"));
        }
    }

    let s = Slices::new(&vocab);
    let d = spec.head_dim;
    let mut embed = Matrix::zeros(vocab.size() as usize, s.width);
    for t in 0..vocab.size() {
        embed.set(t as usize, 0, 1.0);
        if vocab.is_needle_key(t) {
            embed.set(t as usize, s.tok_key + t as usize, 1.0);
        }
        if let Some(i) = vocab.value_index(t) {
            embed.set(t as usize, s.tok_val + i as usize, 1.0);
        }
    }

    let mut l1 = Layer {
        wq: Matrix::zeros(s.width, d),
        wk: Matrix::zeros(s.width, d),
        wv: Matrix::zeros(s.width, d),
        wo: Matrix::zeros(d, s.width),
    };
    for (j, &theta) in basis.thetas()[..spec.prev_pairs].iter().enumerate() {
        let gain = spec.prev_gain;
        l1.wq.set(0, 2 * j, (gain * libm::cos(theta)) as f32);
        l1.wq.set(0, 2 * j + 1, (-gain * libm::sin(theta)) as f32);
        l1.wk.set(0, 2 * j, 1.0);
    }
    for i in 0..p {
        l1.wv.set(s.tok_key + i, i, 1.0);
        l1.wo.set(i, s.prev_key + i, 1.0);
    }

    let mut l2 = Layer {
        wq: Matrix::zeros(s.width, d),
        wk: Matrix::zeros(s.width, d),
        wv: Matrix::zeros(s.width, d),
        wo: Matrix::zeros(d, s.width),
    };
    for i in 0..p {
        let col = 2 * (spec.match_pair_start + i);
        l2.wq.set(s.tok_key + i, col, spec.match_gain as f32);
        l2.wk.set(s.prev_key + i, col, 1.0);
    }
    for i in 0..v {
        l2.wv.set(s.tok_val + i, i, 1.0);
        l2.wo.set(i, s.out + i, 1.0);
    }

    let mut unembed = Matrix::zeros(s.width, v);
    for i in 0..v {
        unembed.set(s.out + i, i, 1.0);
    }

    Ok(FixtureModel {
        spec,
        basis,
        slices: s,
        embed,
        layers: [l1, l2],
        unembed,
    })
}

fn head_tensor(data: Vec<f32>, len: usize, dim: usize) -> HeadTensor {
    HeadTensor::from_vec(1, len, dim, data).expect("projection shape")
}

impl FixtureModel {
    pub fn spec(&self) -> &FixtureSpec {
        &self.spec
    }

    pub fn basis(&self) -> &FrequencyBasis {
        &self.basis
    }

    pub fn vocab(&self) -> Vocab {
        self.spec.vocab
    }

    fn embed(&self, tokens: &[u32]) -> Result<Vec<f32>> {
        let w = self.slices.width;
        let mut x = Vec::with_capacity(tokens.len() * w);
        for &t in tokens {
            if t >= self.spec.vocab.size() {
                return Err(Error::Fixture(format!("token {t} outside vocabulary")));
            }
            x.extend_from_slice(&self.embed.data[t as usize * w..(t as usize + 1) * w]);
        }
        Ok(x)
    }

    fn project(&self, layer: &Layer, x: &[f32], len: usize) -> (HeadTensor, HeadTensor, HeadTensor) {
        let d = self.spec.head_dim;
        (
            head_tensor(layer.wq.apply(x), len, d),
            head_tensor(layer.wk.apply(x), len, d),
            head_tensor(layer.wv.apply(x), len, d),
        )
    }

    /// Run attention for `rows` of one layer and add its output to `x`.
    fn attend(
        &self,
        layer: &Layer,
        x: &mut [f32],
        len: usize,
        basis: &FrequencyBasis,
        scheme: &PositionScheme,
        rows: Range<usize>,
    ) -> Result<()> {
        let (q, k, v) = self.project(layer, x, len);
        let problem = AttentionProblem::new(q, k, v, basis.clone(), scheme.clone())?.with_logit_scale(1.0);
        let engine = ExactEngine::new(&problem, len)?;
        let d = self.spec.head_dim;
        let mut out = vec![0.0f32; rows.len() * d];
        engine.run_rows(0, rows.clone(), &mut out, None);
        let w = self.slices.width;
        let delta = layer.wo.apply(&out);
        for (r, row) in rows.enumerate() {
            for (xv, dv) in x[row * w..(row + 1) * w].iter_mut().zip(&delta[r * w..(r + 1) * w]) {
                *xv += dv;
            }
        }
        Ok(())
    }

    /// Predicted value token at each position in `rows`, `None` when no
    /// value receives positive mass.
    pub fn predict(&self, tokens: &[u32], setup: &MethodSetup, rows: Range<usize>) -> Result<Vec<Option<u32>>> {
        if setup.basis.head_dim() != self.spec.head_dim {
            return Err(Error::Fixture("method basis does not match the fixture head dimension".into()));
        }
        let len = tokens.len();
        if rows.end > len {
            return Err(Error::Fixture(format!("rows {rows:?} exceed context of {len}")));
        }
        let mut x = self.embed(tokens)?;
        self.attend(&self.layers[0], &mut x, len, &setup.basis, &setup.schemes[0], 0..len)?;
        self.attend(&self.layers[1], &mut x, len, &setup.basis, &setup.schemes[1], rows.clone())?;
        let w = self.slices.width;
        Ok(rows
            .map(|row| {
                let logits = self.unembed.apply(&x[row * w..(row + 1) * w]);
                let (best, score) = logits
                    .iter()
                    .enumerate()
                    .fold((0, f32::NEG_INFINITY), |acc, (i, &s)| if s > acc.1 { (i, s) } else { acc });
                (score > 0.0).then(|| self.spec.vocab.value(best as u32))
            })
            .collect())
    }

    /// Query/key projections of both layers under the standard map.
    pub fn activations(&self, tokens: &[u32]) -> Result<[LayerActivations; 2]> {
        let len = tokens.len();
        let mut x = self.embed(tokens)?;
        let (q1, k1, _) = self.project(&self.layers[0], &x, len);
        let standard = PositionScheme::Uniform(PositionMap::Standard);
        self.attend(&self.layers[0], &mut x, len, &self.basis, &standard, 0..len)?;
        let (q2, k2, _) = self.project(&self.layers[1], &x, len);
        Ok([
            LayerActivations { queries: q1, keys: k1 },
            LayerActivations { queries: q2, keys: k2 },
        ])
    }

    pub fn niah_accuracy(&self, task: &SyntheticNiahTask, setup: &MethodSetup) -> Result<Option<f64>> {
        if task.queries.is_empty() {
            return Ok(None);
        }
        let predictions = self.predict(&task.tokens, setup, task.query_positions())?;
        Ok(task.score(&predictions))
    }

    /// Mean accuracy over tasks that have queries.
    pub fn mean_accuracy(&self, tasks: &[SyntheticNiahTask], setup: &MethodSetup) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for task in tasks {
            if let Some(a) = self.niah_accuracy(task, setup)? {
                total += a;
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Empty("retrieval tasks with queries"));
        }
        Ok(total / count as f64)
    }

    /// `samples` tasks of length `len`, one needle per needle key.
    pub fn tasks(&self, len: usize, samples: usize, root: u64) -> Result<Vec<SyntheticNiahTask>> {
        let needles = self.spec.vocab.needle_keys as usize;
        (0..samples)
            .map(|i| generate_niah(len, needles, self.spec.vocab, seed::derive(root, "fixture-task", i as u64)))
            .collect()
    }
}

/// Replace every needle value in the context with a random value, keeping
/// the recorded answers: a model that retrieves scores at chance.
pub fn shuffle_needle_values(task: &SyntheticNiahTask, root: u64) -> SyntheticNiahTask {
    let mut rng = seed::rng(root, "shuffle-values", task.tokens.len() as u64);
    let mut out = task.clone();
    for needle in &task.needles {
        out.tokens[needle.position + 1] = task.vocab.value(rng.random_range(0..task.vocab.values));
    }
    out
}

/// Detection evaluator running the fixture with the cell's group maps on
/// both layers.
#[derive(Debug, Clone)]
pub struct FixtureEvaluator {
    pub model: FixtureModel,
}

impl Evaluator for FixtureEvaluator {
    fn name(&self) -> String {
        "fixture".into()
    }

    fn evaluate(&self, cell: &DetectionCell<'_>) -> core::result::Result<f64, String> {
        let run = || -> Result<f64> {
            let tasks = self.model.tasks(cell.context_length as usize, cell.samples, cell.seed)?;
            let scheme = PositionScheme::Grouped(cell.maps.to_vec());
            let setup = MethodSetup {
                basis: self.model.basis.clone(),
                schemes: [scheme.clone(), scheme],
            };
            self.model.mean_accuracy(&tasks, &setup)
        };
        run().map_err(|e| format!("{e}"))
    }
}
