//! Run configuration. Every field has a default, so a config file only
//! lists what it changes.

use std::path::PathBuf;

use dpe_core::detection::fixture::FixtureSpec;
use dpe_core::rope::{Scaling, DEFAULT_BASE};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    Standard,
    Rerope,
    SelfExtend,
    NtkDynamic,
    Yarn,
    Dpe,
}

impl Baseline {
    pub const ALL: [Baseline; 6] = [
        Baseline::Standard,
        Baseline::Rerope,
        Baseline::SelfExtend,
        Baseline::NtkDynamic,
        Baseline::Yarn,
        Baseline::Dpe,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Baseline::Standard => "standard",
            Baseline::Rerope => "rerope",
            Baseline::SelfExtend => "self_extend",
            Baseline::NtkDynamic => "ntk_dynamic",
            Baseline::Yarn => "yarn",
            Baseline::Dpe => "dpe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct YarnParams {
    pub beta_fast: f64,
    pub beta_slow: f64,
    pub scale: f64,
    pub attn_factor: f64,
}

impl Default for YarnParams {
    fn default() -> Self {
        Self {
            beta_fast: 32.0,
            beta_slow: 1.0,
            scale: 16.0,
            attn_factor: 4f64.ln(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineParams {
    pub ntk_factor: f64,
    pub yarn: YarnParams,
    pub self_extend_window: u32,
    pub self_extend_group: u32,
    pub rerope_window: u32,
}

impl Default for BaselineParams {
    fn default() -> Self {
        Self {
            ntk_factor: 16.0,
            yarn: YarnParams::default(),
            self_extend_window: 1024,
            self_extend_group: 32,
            rerope_window: 2048,
        }
    }
}

impl BaselineParams {
    pub fn yarn_scaling(&self, original_length: u32) -> Scaling {
        Scaling::YarnByParts {
            beta_fast: self.yarn.beta_fast,
            beta_slow: self.yarn.beta_slow,
            scale: self.yarn.scale,
            attn_factor: self.yarn.attn_factor,
            original_length,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EvaluatorSpec {
    Planted {
        thresholds: Vec<u32>,
        #[serde(default)]
        noise: f64,
    },
    Fixture {
        #[serde(default)]
        spec: FixtureSpec,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectConfig {
    pub grid: Vec<u32>,
    pub samples: usize,
    /// Length the detection maps normalize by; the target length if unset.
    pub context_length: Option<u32>,
    /// Half the train length if unset.
    pub baseline_length: Option<u32>,
    pub evaluator: EvaluatorSpec,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            grid: (10..=17).map(|p| 1u32 << p).collect(),
            samples: 20,
            context_length: None,
            baseline_length: None,
            evaluator: EvaluatorSpec::Fixture {
                spec: FixtureSpec::default(),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub baselines: Vec<Baseline>,
    /// Context lengths to score; train and target length if empty.
    pub lengths: Vec<u32>,
    pub samples: usize,
    pub fixture: FixtureSpec,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            baselines: Baseline::ALL.to_vec(),
            lengths: Vec::new(),
            samples: 20,
            fixture: FixtureSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub lengths: Vec<u32>,
    pub heads: usize,
    pub tile: usize,
    pub repeats: usize,
    pub warmup: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            lengths: vec![4096],
            heads: 8,
            tile: dpe_core::attention::DEFAULT_TILE,
            repeats: 5,
            warmup: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub head_dim: usize,
    pub rope_base: f64,
    pub train_length: u32,
    pub target_length: u32,
    pub num_groups: usize,
    pub window: u32,
    pub top_k: usize,
    pub clamp: bool,
    pub effective_lengths: Option<Vec<u32>>,
    /// Explicit key pairs per head; otherwise chosen from `norms`.
    pub key_dims: Option<Vec<Vec<usize>>>,
    /// Norm profile CSV (`head,pair,score`) for key-pair selection.
    pub norms: Option<PathBuf>,
    pub baseline: Baseline,
    pub hyperparameters: BaselineParams,
    pub seed: u64,
    pub out: PathBuf,
    pub detect: DetectConfig,
    pub eval: EvalConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            head_dim: 128,
            rope_base: DEFAULT_BASE,
            train_length: 8192,
            target_length: 131072,
            num_groups: 8,
            window: 1024,
            top_k: 48,
            clamp: true,
            effective_lengths: None,
            key_dims: None,
            norms: None,
            baseline: Baseline::Dpe,
            hyperparameters: BaselineParams::default(),
            seed: 0,
            out: PathBuf::from("out"),
            detect: DetectConfig::default(),
            eval: EvalConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = RunConfig::default();
        assert_eq!((c.num_groups, c.window, c.top_k), (8, 1024, 48));
        let h = &c.hyperparameters;
        assert_eq!((h.ntk_factor, h.rerope_window), (16.0, 2048));
        assert_eq!((h.self_extend_window, h.self_extend_group), (1024, 32));
        assert_eq!((h.yarn.beta_fast, h.yarn.beta_slow, h.yarn.scale), (32.0, 1.0, 16.0));
        assert_eq!(h.yarn.attn_factor, 4f64.ln());
        assert_eq!(RunConfig::from_json("{}").unwrap(), c);
    }

    #[test]
    fn unknown_names_are_rejected() {
        assert!(RunConfig::from_json(r#"{"baseline": "alibi"}"#).is_err());
        assert!(RunConfig::from_json(r#"{"windw": 3}"#).is_err());
        let c = RunConfig::from_json(r#"{"baseline": "self_extend"}"#).unwrap();
        assert_eq!(c.baseline, Baseline::SelfExtend);
    }
}
