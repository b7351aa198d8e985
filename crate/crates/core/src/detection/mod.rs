//! Effective-length detection.
//!
//! For every pair group `i` and detecting length `t` in a grid, group `i`
//! uses the detection map with length `t` while every other group sits at
//! a fixed baseline length. An [`Evaluator`] scores each cell; rows are
//! ranked (higher score first, larger `t` on ties) and the rank-1 length of
//! each row is that group's effective length.

pub mod fixture;
pub mod niah;

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::maps::PositionMap;
use crate::{seed, Error, Result};

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SweepConfig {
    pub num_groups: usize,
    /// Strictly increasing detecting lengths.
    pub grid: Vec<u32>,
    pub window: u32,
    pub train_length: u32,
    /// Sequence length the detection maps are normalized by.
    pub context_length: u32,
    /// Detecting length for the groups not being swept.
    pub baseline_length: u32,
    pub samples: usize,
    pub seed: u64,
}

impl SweepConfig {
    /// Grid of powers of two from 1024 to 131072, baseline at half the
    /// train length.
    pub fn power_of_two(num_groups: usize, window: u32, train_length: u32, context_length: u32) -> Self {
        Self {
            num_groups,
            grid: (10..=17).map(|p| 1u32 << p).collect(),
            window,
            train_length,
            context_length,
            baseline_length: train_length / 2,
            samples: 20,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_groups == 0 {
            return Err(Error::Sweep("at least one group is required".into()));
        }
        if self.grid.is_empty() {
            return Err(Error::Sweep("detecting grid is empty".into()));
        }
        if self.grid[0] == 0 || self.grid.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Sweep(format!(
                "detecting grid must be positive and strictly increasing: {:?}",
                self.grid
            )));
        }
        if self.baseline_length == 0 || self.baseline_length > self.train_length {
            return Err(Error::Sweep(format!(
                "baseline length {} must be in 1..={}",
                self.baseline_length, self.train_length
            )));
        }
        if self.context_length <= self.window {
            return Err(Error::Sweep(format!(
                "context length {} must exceed window {}",
                self.context_length, self.window
            )));
        }
        Ok(())
    }

    /// Maps for cell `(group, length)`: detection maps with `length` on
    /// `group` and the baseline length everywhere else.
    pub fn cell_maps(&self, group: usize, length: u32) -> Result<Vec<PositionMap>> {
        (0..self.num_groups)
            .map(|g| {
                let t = if g == group { length } else { self.baseline_length };
                PositionMap::detection(t, self.window, self.context_length)
            })
            .collect()
    }
}

/// One sweep cell handed to an evaluator.
#[derive(Debug, Clone, Copy)]
pub struct DetectionCell<'a> {
    pub group: usize,
    pub length: u32,
    /// One map per pair group.
    pub maps: &'a [PositionMap],
    pub context_length: u32,
    pub samples: usize,
    pub seed: u64,
}

/// Scores a cell with an accuracy in `[0, 1]`.
pub trait Evaluator {
    fn name(&self) -> String;
    fn evaluate(&self, cell: &DetectionCell<'_>) -> core::result::Result<f64, String>;
}

/// Score matrix with ranks and derived effective lengths.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DetectionReport {
    pub grid: Vec<u32>,
    /// `num_groups x grid.len()` accuracies.
    pub scores: Vec<Vec<f64>>,
    /// Rank (1 = best) of each cell within its row.
    pub ranks: Vec<Vec<u32>>,
    pub effective_lengths: Vec<u32>,
    pub metadata: ReportMetadata,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ReportMetadata {
    pub seed: u64,
    pub evaluator: String,
    pub samples: usize,
    pub window: u32,
    pub train_length: u32,
    pub context_length: u32,
    pub baseline_length: u32,
    /// Wall-clock stamp; left empty unless the caller sets one, so that
    /// equal seeds serialize identically.
    pub timestamp: Option<String>,
}

impl ReportMetadata {
    pub fn from_config(config: &SweepConfig, evaluator: String) -> Self {
        Self {
            seed: config.seed,
            evaluator,
            samples: config.samples,
            window: config.window,
            train_length: config.train_length,
            context_length: config.context_length,
            baseline_length: config.baseline_length,
            timestamp: None,
        }
    }
}

/// Rank one row: higher score first, larger detecting length on ties.
fn rank_row(grid: &[u32], row: &[f64], group: usize) -> Result<Vec<u32>> {
    if let Some(i) = row.iter().position(|s| s.is_nan()) {
        return Err(Error::NanScore {
            group,
            length: grid[i],
        });
    }
    let mut order: Vec<usize> = (0..row.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(grid[b].cmp(&grid[a])));
    let mut ranks = alloc::vec![0u32; row.len()];
    for (r, &i) in order.iter().enumerate() {
        ranks[i] = r as u32 + 1;
    }
    Ok(ranks)
}

impl DetectionReport {
    /// Build a report from a complete score matrix, ranking every row.
    pub fn from_scores(grid: Vec<u32>, scores: Vec<Vec<f64>>, metadata: ReportMetadata) -> Result<Self> {
        let mut report = Self {
            grid,
            scores,
            ranks: Vec::new(),
            effective_lengths: Vec::new(),
            metadata,
        };
        report.rank_and_derive()?;
        Ok(report)
    }

    /// Recompute ranks and effective lengths from the score matrix.
    pub fn rank_and_derive(&mut self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::Sweep("detecting grid is empty".into()));
        }
        for (g, row) in self.scores.iter().enumerate() {
            if row.len() != self.grid.len() {
                return Err(Error::Sweep(format!(
                    "row {g} has {} scores for {} grid points",
                    row.len(),
                    self.grid.len()
                )));
            }
        }
        self.ranks = self
            .scores
            .iter()
            .enumerate()
            .map(|(g, row)| rank_row(&self.grid, row, g))
            .collect::<Result<_>>()?;
        self.effective_lengths = self.effective_lengths_at_rank(1)?;
        Ok(())
    }

    /// Detecting length holding rank `rank` in every row.
    pub fn effective_lengths_at_rank(&self, rank: u32) -> Result<Vec<u32>> {
        if rank == 0 || rank as usize > self.grid.len() {
            return Err(Error::Sweep(format!("rank {rank} outside 1..={}", self.grid.len())));
        }
        Ok(self
            .ranks
            .iter()
            .map(|row| self.grid[row.iter().position(|&r| r == rank).expect("ranks are a permutation")])
            .collect())
    }

    pub fn num_groups(&self) -> usize {
        self.scores.len()
    }
}

/// Fill the score matrix cell by cell and rank it.
pub fn run_sweep<E: Evaluator + ?Sized>(config: &SweepConfig, evaluator: &E) -> Result<DetectionReport> {
    config.validate()?;
    let mut scores = Vec::with_capacity(config.num_groups);
    for group in 0..config.num_groups {
        let mut row = Vec::with_capacity(config.grid.len());
        for &length in &config.grid {
            row.push(evaluate_cell(config, evaluator, group, length)?);
        }
        scores.push(row);
    }
    DetectionReport::from_scores(
        config.grid.clone(),
        scores,
        ReportMetadata::from_config(config, evaluator.name()),
    )
}

/// Evaluate a single cell; errors carry the cell coordinates.
pub fn evaluate_cell<E: Evaluator + ?Sized>(
    config: &SweepConfig,
    evaluator: &E,
    group: usize,
    length: u32,
) -> Result<f64> {
    let maps = config.cell_maps(group, length)?;
    let cell = DetectionCell {
        group,
        length,
        maps: &maps,
        context_length: config.context_length,
        samples: config.samples,
        seed: config.seed,
    };
    let score = evaluator.evaluate(&cell).map_err(|message| Error::Evaluator {
        group,
        length,
        message,
    })?;
    if !score.is_nan() && !(0.0..=1.0).contains(&score) {
        return Err(Error::Evaluator {
            group,
            length,
            message: format!("accuracy {score} outside [0, 1]"),
        });
    }
    Ok(score)
}

/// Ground-truth evaluator: group `i` is perfect up to `thresholds[i]` and
/// decays linearly to zero at twice the threshold.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlantedEvaluator {
    pub thresholds: Vec<u32>,
    /// Uniform noise amplitude added before clamping to `[0, 1]`.
    pub noise: f64,
    pub seed: u64,
}

impl PlantedEvaluator {
    pub fn new(thresholds: Vec<u32>) -> Self {
        Self {
            thresholds,
            noise: 0.0,
            seed: 0,
        }
    }

    pub fn accuracy(threshold: u32, length: u32) -> f64 {
        if length <= threshold {
            1.0
        } else {
            let tau = threshold as f64;
            (1.0 - (length as f64 - tau) / tau).max(0.0)
        }
    }
}

impl Evaluator for PlantedEvaluator {
    fn name(&self) -> String {
        "planted".into()
    }

    fn evaluate(&self, cell: &DetectionCell<'_>) -> core::result::Result<f64, String> {
        let &threshold = self
            .thresholds
            .get(cell.group)
            .ok_or_else(|| format!("no planted threshold for group {}", cell.group))?;
        if threshold == 0 {
            return Err(format!("planted threshold of group {} is zero", cell.group));
        }
        let mut acc = Self::accuracy(threshold, cell.length);
        if self.noise > 0.0 {
            let mut rng = seed::rng(self.seed, "planted-noise", ((cell.group as u64) << 32) | cell.length as u64);
            acc += rng.random_range(-self.noise..=self.noise);
        }
        Ok(acc.clamp(0.0, 1.0))
    }
}
