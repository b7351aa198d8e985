//! Plan JSON: the dimension plan plus format versions and warnings, and
//! key-pair selection from config or a norm profile.

use std::fs;

use dpe_core::contribution::select_key_dims;
use dpe_core::maps::{DimensionPlan, PlanInputs};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Result, RunError};
use crate::report;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Versions {
    pub format: u32,
    pub dpe: String,
}

impl Default for Versions {
    fn default() -> Self {
        Self {
            format: FORMAT_VERSION,
            dpe: env!("CARGO_PKG_VERSION").to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanFile {
    #[serde(flatten)]
    pub plan: DimensionPlan,
    pub versions: Versions,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl PlanFile {
    pub fn new(plan: DimensionPlan) -> Self {
        let warnings = plan.warnings().iter().map(ToString::to_string).collect();
        Self {
            plan,
            versions: Versions::default(),
            warnings,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plan serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: PlanFile = serde_json::from_str(text)?;
        if file.versions.format != FORMAT_VERSION {
            return Err(RunError::Usage(format!(
                "plan format {} is not supported (expected {FORMAT_VERSION})",
                file.versions.format
            )));
        }
        file.plan.validate()?;
        Ok(file)
    }
}

/// Key pairs per head: explicit in the config, or the top `top_k` of the
/// configured norm profile.
pub fn key_dims(config: &RunConfig) -> Result<Vec<Vec<usize>>> {
    if let Some(dims) = &config.key_dims {
        if dims.iter().any(|set| set.len() != config.top_k) {
            return Err(RunError::Usage(format!(
                "key_dims sets must each hold top_k = {} pairs",
                config.top_k
            )));
        }
        return Ok(dims.clone());
    }
    if let Some(path) = &config.norms {
        let profile = report::parse_norms_csv(&fs::read_to_string(path)?)?;
        if profile.num_pairs() != config.head_dim / 2 {
            return Err(RunError::Data(format!(
                "norm profile has {} pairs, head dimension {} needs {}",
                profile.num_pairs(),
                config.head_dim,
                config.head_dim / 2
            )));
        }
        return Ok(select_key_dims(&profile, config.top_k)?);
    }
    if config.top_k == 0 {
        return Ok(vec![Vec::new()]);
    }
    Err(RunError::Usage(
        "top_k > 0 needs key_dims or a norms profile in the config".into(),
    ))
}

pub fn build_plan(config: &RunConfig) -> Result<PlanFile> {
    let effective_lengths = config
        .effective_lengths
        .clone()
        .ok_or_else(|| RunError::Usage("plan needs effective_lengths (run `detect` first)".into()))?;
    let plan = DimensionPlan::build(PlanInputs {
        head_dim: config.head_dim,
        train_length: config.train_length,
        target_length: config.target_length,
        num_groups: config.num_groups,
        window: config.window,
        effective_lengths,
        key_dims: key_dims(config)?,
        clamp: config.clamp,
    })?;
    Ok(PlanFile::new(plan))
}

/// Copy the plan's parameters back into a config.
pub fn apply_plan(config: &mut RunConfig, plan: &DimensionPlan) {
    config.head_dim = plan.head_dim;
    config.train_length = plan.train_length;
    config.target_length = plan.target_length;
    config.num_groups = plan.groups.len();
    config.window = plan.window;
    config.clamp = plan.clamp;
    config.effective_lengths = Some(plan.effective_lengths.clone());
    config.key_dims = Some(plan.key_dims.clone());
    config.top_k = plan.top_k();
}
