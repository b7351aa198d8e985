//! Wall-clock comparison of the tiled engine under standard positions and
//! under a DPE plan.

use std::fmt::Write;
use std::time::Instant;

use dpe_core::attention::{AttentionProblem, PositionScheme};
use dpe_core::maps::{DimensionPlan, PlanInputs, PositionMap, SplitForm};
use dpe_core::rope::{FrequencyBasis, Scaling};
use dpe_core::seed;
use dpe_core::tensor::HeadTensor;
use rand::seq::index::sample;
use rand::Rng;
use rayon::ThreadPool;
use serde::Serialize;

use crate::error::Result;
use crate::parallel;
use crate::report::BENCH_HEADER;

/// Effective lengths used when a bench config gives none (128k target).
pub const DEFAULT_EFFECTIVE_LENGTHS: [u32; 8] = [65536, 16384, 65536, 16384, 4096, 4096, 8192, 32768];

/// Shape and plan parameters of one benchmark run.
#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub lengths: Vec<u32>,
    pub heads: usize,
    pub head_dim: usize,
    pub tile: usize,
    pub repeats: usize,
    pub warmup: usize,
    pub window: u32,
    pub top_k: usize,
    /// Per-group effective lengths for the DPE run at each length.
    pub effective_lengths: Vec<u32>,
    /// Length the effective lengths refer to; they are rescaled to each
    /// benchmarked length.
    pub reference_length: u32,
    pub clamp: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRow {
    pub engine: String,
    #[serde(rename = "L")]
    pub len: u32,
    #[serde(rename = "H")]
    pub heads: usize,
    pub d: usize,
    pub tile: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
    pub peak_bytes: usize,
    /// Coefficient of variation of the timings.
    pub cv: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// `(L, dpe mean / standard mean)`.
    pub overhead: Vec<(u32, f64)>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{BENCH_HEADER}\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{:.4},{:.4},{}",
                r.engine, r.len, r.heads, r.d, r.tile, r.mean_ms, r.std_ms, r.peak_bytes
            )
            .unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bench report serializes")
    }
}

fn stats(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = if samples.len() > 1 {
        samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn random_tensor(root: u64, label: &str, h: usize, l: usize, d: usize) -> HeadTensor {
    let mut rng = seed::rng(root, label, l as u64);
    HeadTensor::from_fn(h, l, d, |_, _, _| rng.random_range(-1.0f32..1.0))
}

/// Plan at length `len`: effective lengths rescaled from the reference
/// length (kept above the window) and random key pairs per head.
pub fn bench_plan(spec: &BenchSpec, len: u32) -> Result<DimensionPlan> {
    let num_pairs = spec.head_dim / 2;
    let effective = spec
        .effective_lengths
        .iter()
        .map(|&e| ((e as u64 * len as u64 / spec.reference_length.max(1) as u64) as u32).max(spec.window + 1))
        .collect();
    let key_dims = (0..spec.heads)
        .map(|h| {
            let mut rng = seed::rng(spec.seed, "bench-keys", h as u64);
            let mut set = sample(&mut rng, num_pairs, spec.top_k.min(num_pairs)).into_vec();
            set.sort_unstable();
            set
        })
        .collect();
    Ok(DimensionPlan::build(PlanInputs {
        head_dim: spec.head_dim,
        train_length: len,
        target_length: len,
        num_groups: spec.effective_lengths.len(),
        window: spec.window,
        effective_lengths: effective,
        key_dims,
        clamp: spec.clamp,
    })?)
}

fn time_engine(problem: &AttentionProblem, spec: &BenchSpec, pool: &ThreadPool) -> Result<(Vec<f64>, usize)> {
    for _ in 0..spec.warmup {
        parallel::attend_tiled_parallel(problem, spec.tile, pool)?;
    }
    let mut times = Vec::with_capacity(spec.repeats);
    let mut peak = 0;
    for _ in 0..spec.repeats {
        let start = Instant::now();
        let engine = parallel::tiled_engine(problem, spec.tile, pool)?;
        let out = parallel::run_engine(&engine, problem, pool);
        times.push(start.elapsed().as_secs_f64() * 1e3);
        peak = engine.scratch_bytes() + std::mem::size_of_val(out.data());
    }
    Ok((times, peak))
}

pub fn run(spec: &BenchSpec, pool: &ThreadPool) -> Result<BenchReport> {
    let mut rows = Vec::new();
    let mut overhead = Vec::new();
    let basis = FrequencyBasis::new(spec.head_dim, dpe_core::rope::DEFAULT_BASE, Scaling::None)?;
    for &len in &spec.lengths {
        if len == 0 || spec.repeats == 0 {
            continue;
        }
        let l = len as usize;
        let q = random_tensor(spec.seed, "bench-q", spec.heads, l, spec.head_dim);
        let k = random_tensor(spec.seed, "bench-k", spec.heads, l, spec.head_dim);
        let v = random_tensor(spec.seed, "bench-v", spec.heads, l, spec.head_dim);
        let standard = AttentionProblem::new(
            q.clone(),
            k.clone(),
            v.clone(),
            basis.clone(),
            PositionScheme::Uniform(PositionMap::Standard),
        )?;
        let dpe = AttentionProblem::new(
            q,
            k,
            v,
            basis.clone(),
            PositionScheme::SplitPlan {
                plan: bench_plan(spec, len)?,
                form: SplitForm::Shifted,
            },
        )?;
        let mut means = Vec::new();
        for (name, problem) in [("standard_tiled", &standard), ("dpe_tiled", &dpe)] {
            let (times, peak) = time_engine(problem, spec, pool)?;
            let (mean, std) = stats(&times);
            means.push(mean);
            rows.push(BenchRow {
                engine: name.into(),
                len,
                heads: spec.heads,
                d: spec.head_dim,
                tile: spec.tile,
                mean_ms: mean,
                std_ms: std,
                peak_bytes: peak,
                cv: if mean > 0.0 { std / mean } else { 0.0 },
            });
        }
        overhead.push((len, means[1] / means[0]));
    }
    Ok(BenchReport { rows, overhead })
}
