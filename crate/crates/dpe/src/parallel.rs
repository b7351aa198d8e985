//! Rayon drivers for the tiled engine and detection sweeps. Work items
//! write disjoint outputs and each runs the same sequential code, so
//! results do not depend on the worker count.

use std::env;

use dpe_core::attention::{AttentionOutput, AttentionProblem, TiledEngine, TiledHead};
use dpe_core::detection::{evaluate_cell, DetectionReport, Evaluator, ReportMetadata, SweepConfig};
use dpe_core::tensor::HeadTensor;
use rayon::prelude::*;
use rayon::ThreadPool;

use crate::error::{Result, RunError};

pub const THREADS_ENV: &str = "DPE_THREADS";

/// Worker count from `DPE_THREADS`, if set.
pub fn threads_from_env() -> Result<Option<usize>> {
    match env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(RunError::Usage(format!("{THREADS_ENV}={v:?} is not a positive integer"))),
        },
        Err(_) => Ok(None),
    }
}

pub fn pool(threads: Option<usize>) -> Result<ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| RunError::Usage(format!("cannot start worker pool: {e}")))
}

/// Prepare heads in parallel.
pub fn tiled_engine<'a>(problem: &'a AttentionProblem, tile: usize, pool: &ThreadPool) -> Result<TiledEngine<'a>> {
    problem.validate()?;
    let heads = pool.install(|| {
        (0..problem.num_heads())
            .into_par_iter()
            .map(|h| TiledHead::new(problem, h))
            .collect::<dpe_core::Result<Vec<_>>>()
    })?;
    Ok(TiledEngine::from_heads(problem, tile, heads)?)
}

/// Run a prepared engine over `(head, query tile)` work items.
pub fn run_engine(engine: &TiledEngine<'_>, problem: &AttentionProblem, pool: &ThreadPool) -> HeadTensor {
    let (h, len, dv) = (problem.num_heads(), problem.seq_len(), problem.value_dim());
    let mut output = HeadTensor::zeros(h, len, dv);
    let chunk = engine.tile() * dv;
    if len > 0 && dv > 0 {
        pool.install(|| {
            output
                .data_mut()
                .par_chunks_mut(len * dv)
                .enumerate()
                .for_each(|(head, block)| {
                    block
                        .par_chunks_mut(chunk)
                        .enumerate()
                        .for_each(|(t, out)| engine.run_tile(head, t, out));
                });
        });
    }
    output
}

pub fn attend_tiled_parallel(problem: &AttentionProblem, tile: usize, pool: &ThreadPool) -> Result<AttentionOutput> {
    let engine = tiled_engine(problem, tile, pool)?;
    Ok(AttentionOutput {
        output: run_engine(&engine, problem, pool),
        logits: None,
    })
}

/// [`dpe_core::detection::run_sweep`] with cells evaluated in parallel.
pub fn run_sweep_parallel<E>(config: &SweepConfig, evaluator: &E, pool: &ThreadPool) -> Result<DetectionReport>
where
    E: Evaluator + Sync + ?Sized,
{
    config.validate()?;
    let cells: Vec<(usize, u32)> = (0..config.num_groups)
        .flat_map(|g| config.grid.iter().map(move |&t| (g, t)))
        .collect();
    let flat = pool.install(|| {
        cells
            .par_iter()
            .map(|&(g, t)| evaluate_cell(config, evaluator, g, t))
            .collect::<dpe_core::Result<Vec<f64>>>()
    })?;
    let scores = flat.chunks(config.grid.len()).map(<[f64]>::to_vec).collect();
    Ok(DetectionReport::from_scores(
        config.grid.clone(),
        scores,
        ReportMetadata::from_config(config, evaluator.name()),
    )?)
}
