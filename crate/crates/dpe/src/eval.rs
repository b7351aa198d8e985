//! Retrieval accuracy of each baseline on the induction fixture.

use std::fmt::Write;

use dpe_core::attention::PositionScheme;
use dpe_core::contribution::{collect_norms, select_key_dims, NormMode};
use dpe_core::detection::fixture::{build_fixture_model, FixtureEvaluator, FixtureModel, MethodSetup};
use dpe_core::detection::niah::SyntheticNiahTask;
use dpe_core::detection::{DetectionReport, SweepConfig};
use dpe_core::maps::{DimensionPlan, PlanInputs, PositionMap};
use dpe_core::rope::{FrequencyBasis, Scaling};
use dpe_core::seed;
use rayon::prelude::*;
use rayon::ThreadPool;
use serde::Serialize;

use crate::config::{Baseline, EvaluatorSpec, RunConfig};
use crate::error::{Result, RunError};
use crate::parallel;
use crate::report::EVAL_HEADER;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub baseline: Baseline,
    #[serde(rename = "L")]
    pub len: u32,
    pub accuracy: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Per-layer plans used for the `dpe` rows.
    pub plans: Option<[DimensionPlan; 2]>,
    pub detection: Option<DetectionReport>,
}

impl EvalReport {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{EVAL_HEADER}\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.baseline.name(), r.len, r.accuracy, r.samples).unwrap();
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("eval report serializes")
    }

    pub fn accuracy(&self, baseline: Baseline, len: u32) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.baseline == baseline && r.len == len)
            .map(|r| r.accuracy)
    }
}

/// Sweep config for detecting the fixture's effective lengths.
pub fn fixture_sweep(config: &RunConfig) -> SweepConfig {
    SweepConfig {
        num_groups: config.num_groups,
        grid: config.detect.grid.clone(),
        window: config.window,
        train_length: config.train_length,
        context_length: config.detect.context_length.unwrap_or(config.target_length),
        baseline_length: config.detect.baseline_length.unwrap_or(config.train_length / 2),
        samples: config.detect.samples,
        seed: seed::derive(config.seed, "detect", 0),
    }
}

/// Key pairs per fixture layer, from norms over one train-length task.
pub fn fixture_key_dims(model: &FixtureModel, config: &RunConfig) -> Result<[Vec<Vec<usize>>; 2]> {
    if let Some(dims) = &config.key_dims {
        return Ok([dims.clone(), dims.clone()]);
    }
    let task = &model.tasks(config.train_length as usize, 1, seed::derive(config.seed, "norms", 0))?[0];
    let acts = model.activations(&task.tokens)?;
    let pick = |i: usize| -> Result<Vec<Vec<usize>>> {
        let profile = collect_norms(&acts[i].queries, &acts[i].keys, NormMode::Factored)?;
        Ok(select_key_dims(&profile, config.top_k)?)
    };
    Ok([pick(0)?, pick(1)?])
}

fn setup(model: &FixtureModel, config: &RunConfig, baseline: Baseline, plans: Option<&[DimensionPlan; 2]>) -> Result<MethodSetup> {
    let spec = model.spec();
    let h = &config.hyperparameters;
    let basis = |scaling| FrequencyBasis::new(spec.head_dim, spec.base, scaling);
    let standard = model.basis().clone();
    Ok(match baseline {
        Baseline::Standard => MethodSetup::uniform(standard, PositionMap::Standard),
        Baseline::Rerope => MethodSetup::uniform(standard, PositionMap::rerope(h.rerope_window)),
        Baseline::SelfExtend => MethodSetup::uniform(
            standard,
            PositionMap::self_extend(h.self_extend_window, h.self_extend_group)?,
        ),
        Baseline::NtkDynamic => MethodSetup::uniform(
            basis(Scaling::NtkDynamic { factor: h.ntk_factor })?,
            PositionMap::Standard,
        ),
        Baseline::Yarn => MethodSetup::uniform(basis(h.yarn_scaling(config.train_length))?, PositionMap::Standard),
        Baseline::Dpe => {
            let [a, b] = plans.expect("plans built for dpe").clone();
            MethodSetup {
                basis: standard,
                schemes: [PositionScheme::Plan(a), PositionScheme::Plan(b)],
            }
        }
    })
}

fn mean_accuracy(model: &FixtureModel, tasks: &[SyntheticNiahTask], setup: &MethodSetup, pool: &ThreadPool) -> Result<f64> {
    let scores = pool.install(|| {
        tasks
            .par_iter()
            .map(|t| model.niah_accuracy(t, setup))
            .collect::<dpe_core::Result<Vec<_>>>()
    })?;
    let valid: Vec<f64> = scores.into_iter().flatten().collect();
    if valid.is_empty() {
        return Err(RunError::Usage("no evaluation task has queries".into()));
    }
    Ok(valid.iter().sum::<f64>() / valid.len() as f64)
}

pub fn run(config: &RunConfig, pool: &ThreadPool) -> Result<EvalReport> {
    let model = build_fixture_model(config.eval.fixture.clone())?;
    if config.head_dim != model.spec().head_dim {
        return Err(RunError::Usage(format!(
            "head_dim {} does not match the fixture's {}",
            config.head_dim,
            model.spec().head_dim
        )));
    }
    let lengths = if config.eval.lengths.is_empty() {
        vec![config.train_length, config.target_length]
    } else {
        config.eval.lengths.clone()
    };
    let mut detection = None;
    let plans = if config.eval.baselines.contains(&Baseline::Dpe) {
        let effective = match &config.effective_lengths {
            Some(e) => e.clone(),
            None => {
                let report = parallel::run_sweep_parallel(&fixture_sweep(config), &FixtureEvaluator { model: model.clone() }, pool)?;
                let e = report.effective_lengths.clone();
                detection = Some(report);
                e
            }
        };
        let keys = fixture_key_dims(&model, config)?;
        let plan = |key_dims: Vec<Vec<usize>>| {
            DimensionPlan::build(PlanInputs {
                head_dim: config.head_dim,
                train_length: config.train_length,
                target_length: config.target_length,
                num_groups: config.num_groups,
                window: config.window,
                effective_lengths: effective.clone(),
                key_dims,
                clamp: config.clamp,
            })
        };
        let [k0, k1] = keys;
        Some([plan(k0)?, plan(k1)?])
    } else {
        None
    };
    let mut rows = Vec::new();
    for &len in &lengths {
        let tasks = model.tasks(len as usize, config.eval.samples, seed::derive(config.seed, "eval", len as u64))?;
        for &baseline in &config.eval.baselines {
            let s = setup(&model, config, baseline, plans.as_ref())?;
            rows.push(EvalRow {
                baseline,
                len,
                accuracy: mean_accuracy(&model, &tasks, &s, pool)?,
                samples: tasks.len(),
            });
        }
    }
    Ok(EvalReport { rows, plans, detection })
}

/// Detection evaluator built from the config.
pub fn evaluator(config: &RunConfig) -> Result<Box<dyn dpe_core::detection::Evaluator + Send + Sync>> {
    Ok(match &config.detect.evaluator {
        EvaluatorSpec::Planted { thresholds, noise } => Box::new(dpe_core::detection::PlantedEvaluator {
            thresholds: thresholds.clone(),
            noise: *noise,
            seed: seed::derive(config.seed, "planted", 0),
        }),
        EvaluatorSpec::Fixture { spec } => Box::new(FixtureEvaluator {
            model: build_fixture_model(spec.clone())?,
        }),
    })
}
