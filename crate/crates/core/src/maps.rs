//! Relative-position maps and dimension plans.
//!
//! Relative distance is `rel = query_position - key_position >= 0`. Every
//! map sends `rel` to the integer index fed into the rotation, is the
//! identity on `[0, window]`, and is non-decreasing.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::ops::Range;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum PositionMap {
    Standard,
    /// Truncation: everything beyond the window collapses to the window.
    ReRope { window: u32 },
    /// Grouped positions: `floor((rel - w) / g) + w` beyond the window.
    SelfExtend { window: u32, group: u32 },
    /// Detection sweep map: `floor((rel - w) * t / L) + w` beyond the window.
    Detection { length: u32, window: u32, context: u32 },
    /// Dimension-wise scaled map `floor((rel - w) / s) + w`, optionally
    /// capped at the effective length `e`.
    Dpe {
        scale: u32,
        window: u32,
        effective: u32,
        clamp: bool,
    },
}

impl PositionMap {
    pub fn rerope(window: u32) -> Self {
        PositionMap::ReRope { window }
    }

    pub fn self_extend(window: u32, group: u32) -> Result<Self> {
        let map = PositionMap::SelfExtend { window, group };
        map.validate()?;
        Ok(map)
    }

    pub fn detection(length: u32, window: u32, context: u32) -> Result<Self> {
        let map = PositionMap::Detection {
            length,
            window,
            context,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn dpe(scale: u32, window: u32, effective: u32, clamp: bool) -> Result<Self> {
        let map = PositionMap::Dpe {
            scale,
            window,
            effective,
            clamp,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PositionMap::Standard | PositionMap::ReRope { .. } => Ok(()),
            PositionMap::SelfExtend { group, .. } => {
                if group == 0 {
                    return Err(Error::MapParameter("Self-Extend group size must be at least 1".into()));
                }
                Ok(())
            }
            PositionMap::Detection {
                length,
                window,
                context,
            } => {
                if length == 0 {
                    return Err(Error::MapParameter("detecting length must be at least 1".into()));
                }
                if context <= window {
                    return Err(Error::MapParameter(format!(
                        "context length {context} must exceed window {window}"
                    )));
                }
                Ok(())
            }
            PositionMap::Dpe {
                scale,
                window,
                effective,
                clamp,
            } => {
                if scale == 0 {
                    return Err(Error::MapParameter("scale size must be at least 1".into()));
                }
                if clamp && effective <= window {
                    return Err(Error::MapParameter(format!(
                        "effective length {effective} must exceed window {window} when clamping"
                    )));
                }
                Ok(())
            }
        }
    }

    /// Local window of the map; `u32::MAX` for the standard map.
    pub fn window(&self) -> u32 {
        match *self {
            PositionMap::Standard => u32::MAX,
            PositionMap::ReRope { window }
            | PositionMap::SelfExtend { window, .. }
            | PositionMap::Detection { window, .. }
            | PositionMap::Dpe { window, .. } => window,
        }
    }

    #[inline]
    pub fn apply(&self, rel: u32) -> u32 {
        match *self {
            PositionMap::Standard => rel,
            PositionMap::ReRope { window } => rel.min(window),
            PositionMap::SelfExtend { window, group } => {
                if rel <= window {
                    rel
                } else {
                    (rel - window) / group + window
                }
            }
            PositionMap::Detection {
                length,
                window,
                context,
            } => {
                if rel <= window {
                    rel
                } else {
                    let scaled = (rel - window) as u64 * length as u64 / context as u64;
                    (scaled + window as u64).min(u32::MAX as u64) as u32
                }
            }
            PositionMap::Dpe {
                scale,
                window,
                effective,
                clamp,
            } => {
                if rel <= window {
                    rel
                } else {
                    let v = (rel - window) / scale + window;
                    if clamp {
                        v.min(effective)
                    } else {
                        v
                    }
                }
            }
        }
    }

    /// [`apply`](Self::apply) for a signed distance; negative input is an error.
    pub fn try_apply(&self, rel: i64) -> Result<u32> {
        self.validate()?;
        if rel < 0 {
            return Err(Error::NegativeDistance(rel));
        }
        let rel = u32::try_from(rel).map_err(|_| Error::MapParameter(format!("distance {rel} exceeds u32")))?;
        Ok(self.apply(rel))
    }

    /// `apply(rel)` for every `rel` in `0..len`.
    pub fn table(&self, len: usize) -> Vec<u32> {
        (0..len as u32).map(|rel| self.apply(rel)).collect()
    }
}

fn non_negative(name: &str, value: i64) -> Result<u32> {
    if value < 0 {
        return Err(Error::MapParameter(format!("{name} must be non-negative, got {value}")));
    }
    u32::try_from(value).map_err(|_| Error::MapParameter(format!("{name} {value} exceeds u32")))
}

pub fn map_standard(rel: i64) -> Result<u32> {
    PositionMap::Standard.try_apply(rel)
}

pub fn map_rerope(rel: i64, window: i64) -> Result<u32> {
    PositionMap::rerope(non_negative("window", window)?).try_apply(rel)
}

pub fn map_self_extend(rel: i64, window: i64, group: i64) -> Result<u32> {
    PositionMap::self_extend(non_negative("window", window)?, non_negative("group", group)?)?.try_apply(rel)
}

pub fn map_detection(rel: i64, length: i64, window: i64, context: i64) -> Result<u32> {
    PositionMap::detection(
        non_negative("detecting length", length)?,
        non_negative("window", window)?,
        non_negative("context length", context)?,
    )?
    .try_apply(rel)
}

pub fn map_dpe(rel: i64, scale: i64, window: i64, effective: i64, clamp: bool) -> Result<u32> {
    PositionMap::dpe(
        non_negative("scale", scale)?,
        non_negative("window", window)?,
        non_negative("effective length", effective)?,
        clamp,
    )?
    .try_apply(rel)
}

/// How the query side of a separable split index is offset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum SplitForm {
    /// Query at `floor((m - w) / s) + w`. Deviates from the relative map by
    /// at most one index.
    #[default]
    Shifted,
    /// Query at `floor(m / s) + w - floor(w / s)` (per-token grouped form).
    /// Deviates by up to two indices when `s` does not divide `w`.
    GroupedOffset,
}

/// Per-token index pair realizing `floor((rel - w) / s) + w` beyond the
/// window as a difference `query_index(m) - key_index(n)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitIndex {
    pub scale: u32,
    pub window: u32,
    pub form: SplitForm,
}

impl SplitIndex {
    pub fn new(scale: u32, window: u32, form: SplitForm) -> Result<Self> {
        if scale == 0 {
            return Err(Error::MapParameter("scale size must be at least 1".into()));
        }
        Ok(Self { scale, window, form })
    }

    #[inline]
    pub fn query_index(&self, m: u32) -> u32 {
        match self.form {
            SplitForm::Shifted => {
                if m >= self.window {
                    (m - self.window) / self.scale + self.window
                } else {
                    m
                }
            }
            SplitForm::GroupedOffset => m / self.scale + self.window - self.window / self.scale,
        }
    }

    #[inline]
    pub fn key_index(&self, n: u32) -> u32 {
        n / self.scale
    }

    /// Effective relative index for `m - n > window`.
    #[inline]
    pub fn relative(&self, m: u32, n: u32) -> u32 {
        self.query_index(m).saturating_sub(self.key_index(n))
    }
}

/// Contiguous partition of frequency pairs into groups. When the group
/// count does not divide the pair count, the last group absorbs the
/// remainder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupLayout {
    num_pairs: usize,
    num_groups: usize,
}

impl GroupLayout {
    pub fn new(num_pairs: usize, num_groups: usize) -> Result<Self> {
        if num_groups == 0 || num_groups > num_pairs {
            return Err(Error::Plan(format!(
                "group count {num_groups} must be in 1..={num_pairs}"
            )));
        }
        Ok(Self { num_pairs, num_groups })
    }

    pub fn num_pairs(&self) -> usize {
        self.num_pairs
    }

    pub fn num_groups(&self) -> usize {
        self.num_groups
    }

    fn base_size(&self) -> usize {
        self.num_pairs / self.num_groups
    }

    pub fn remainder(&self) -> usize {
        self.num_pairs % self.num_groups
    }

    pub fn group_of(&self, pair: usize) -> usize {
        (pair / self.base_size()).min(self.num_groups - 1)
    }

    pub fn pairs(&self, group: usize) -> Range<usize> {
        let size = self.base_size();
        let start = group * size;
        let end = if group + 1 == self.num_groups {
            self.num_pairs
        } else {
            start + size
        };
        start..end
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PlanWarning {
    RemainderGroup {
        num_pairs: usize,
        num_groups: usize,
        last_group_size: usize,
    },
    EmptyKeySets,
}

impl fmt::Display for PlanWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanWarning::RemainderGroup {
                num_pairs,
                num_groups,
                last_group_size,
            } => write!(
                f,
                "{num_groups} groups do not divide {num_pairs} pairs; last group holds {last_group_size} pairs"
            ),
            PlanWarning::EmptyKeySets => write!(f, "top-k is 0: no pair is rescaled and the plan is the standard map"),
        }
    }
}

/// Inputs to [`DimensionPlan::build`].
#[derive(Debug, Clone)]
pub struct PlanInputs {
    pub head_dim: usize,
    pub train_length: u32,
    pub target_length: u32,
    pub num_groups: usize,
    pub window: u32,
    pub effective_lengths: Vec<u32>,
    /// One key-pair set per head.
    pub key_dims: Vec<Vec<usize>>,
    pub clamp: bool,
}

/// The complete dimension-wise recipe: group layout, effective lengths,
/// scale sizes and per-head key pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct DimensionPlan {
    pub head_dim: usize,
    pub train_length: u32,
    pub target_length: u32,
    pub window: u32,
    pub clamp: bool,
    /// Half-open pair ranges `[start, end)` per group.
    pub groups: Vec<[usize; 2]>,
    pub effective_lengths: Vec<u32>,
    pub scale_sizes: Vec<u32>,
    /// Sorted key pairs per head.
    pub key_dims: Vec<Vec<usize>>,
}

impl DimensionPlan {
    pub fn build(inputs: PlanInputs) -> Result<Self> {
        let PlanInputs {
            head_dim,
            train_length,
            target_length,
            num_groups,
            window,
            effective_lengths,
            mut key_dims,
            clamp,
        } = inputs;
        if head_dim < 2 || head_dim % 2 != 0 {
            return Err(Error::HeadDim(head_dim));
        }
        let layout = GroupLayout::new(head_dim / 2, num_groups)?;
        if target_length < train_length {
            return Err(Error::Plan(format!(
                "target length {target_length} is shorter than train length {train_length}"
            )));
        }
        let scale_sizes = effective_lengths
            .iter()
            .map(|&e| target_length.checked_div(e).map_or(0, |s| s.max(1)))
            .collect();
        for set in &mut key_dims {
            set.sort_unstable();
        }
        let plan = Self {
            head_dim,
            train_length,
            target_length,
            window,
            clamp,
            groups: (0..layout.num_groups())
                .map(|g| {
                    let r = layout.pairs(g);
                    [r.start, r.end]
                })
                .collect(),
            effective_lengths,
            scale_sizes,
            key_dims,
        };
        plan.validate()?;
        Ok(plan)
    }

    pub fn validate(&self) -> Result<()> {
        if self.head_dim < 2 || !self.head_dim.is_multiple_of(2) {
            return Err(Error::HeadDim(self.head_dim));
        }
        let c = self.groups.len();
        let layout = GroupLayout::new(self.head_dim / 2, c)?;
        for (g, bounds) in self.groups.iter().enumerate() {
            let r = layout.pairs(g);
            if *bounds != [r.start, r.end] {
                return Err(Error::Plan(format!(
                    "group {g} spans {bounds:?}, expected [{}, {})",
                    r.start, r.end
                )));
            }
        }
        if self.effective_lengths.len() != c {
            return Err(Error::Plan(format!(
                "{} effective lengths for {c} groups",
                self.effective_lengths.len()
            )));
        }
        if self.scale_sizes.len() != c {
            return Err(Error::Plan(format!("{} scale sizes for {c} groups", self.scale_sizes.len())));
        }
        for (g, (&e, &s)) in self.effective_lengths.iter().zip(&self.scale_sizes).enumerate() {
            if e <= self.window {
                return Err(Error::Plan(format!(
                    "effective length {e} of group {g} must exceed window {}",
                    self.window
                )));
            }
            if s != (self.target_length / e).max(1) {
                return Err(Error::Plan(format!("scale size {s} of group {g} is inconsistent")));
            }
        }
        let num_pairs = self.head_dim / 2;
        let top_k = self.key_dims.first().map_or(0, Vec::len);
        for (h, set) in self.key_dims.iter().enumerate() {
            if set.len() != top_k {
                return Err(Error::Plan(format!(
                    "head {h} has {} key pairs, head 0 has {top_k}",
                    set.len()
                )));
            }
            if set.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Plan(format!("key pairs of head {h} are not distinct and sorted")));
            }
            if let Some(&p) = set.iter().find(|&&p| p >= num_pairs) {
                return Err(Error::Plan(format!("key pair {p} of head {h} is out of range")));
            }
        }
        Ok(())
    }

    pub fn layout(&self) -> GroupLayout {
        GroupLayout {
            num_pairs: self.head_dim / 2,
            num_groups: self.groups.len(),
        }
    }

    pub fn num_heads(&self) -> usize {
        self.key_dims.len()
    }

    pub fn top_k(&self) -> usize {
        self.key_dims.first().map_or(0, Vec::len)
    }

    pub fn is_key(&self, head: usize, pair: usize) -> bool {
        self.key_dims[head].binary_search(&pair).is_ok()
    }

    /// Map applied to the pairs of `group` that are key pairs.
    pub fn group_map(&self, group: usize) -> PositionMap {
        PositionMap::Dpe {
            scale: self.scale_sizes[group],
            window: self.window,
            effective: self.effective_lengths[group],
            clamp: self.clamp,
        }
    }

    pub fn pair_map(&self, head: usize, pair: usize) -> PositionMap {
        if self.is_key(head, pair) {
            self.group_map(self.layout().group_of(pair))
        } else {
            PositionMap::Standard
        }
    }

    pub fn split_index(&self, group: usize, form: SplitForm) -> SplitIndex {
        SplitIndex {
            scale: self.scale_sizes[group],
            window: self.window,
            form,
        }
    }

    pub fn warnings(&self) -> Vec<PlanWarning> {
        let mut out = Vec::new();
        let layout = self.layout();
        if layout.remainder() != 0 {
            let last = layout.pairs(layout.num_groups() - 1);
            out.push(PlanWarning::RemainderGroup {
                num_pairs: layout.num_pairs(),
                num_groups: layout.num_groups(),
                last_group_size: last.len(),
            });
        }
        if self.top_k() == 0 {
            out.push(PlanWarning::EmptyKeySets);
        }
        out
    }
}

/// Human-readable one-line summary, e.g. for logs.
pub fn describe(plan: &DimensionPlan) -> String {
    format!(
        "d={} C={} w={} L_train={} L_target={} E={:?} S={:?} top_k={}",
        plan.head_dim,
        plan.groups.len(),
        plan.window,
        plan.train_length,
        plan.target_length,
        plan.effective_lengths,
        plan.scale_sizes,
        plan.top_k()
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    const REFERENCE_E: [u32; 8] = [65536, 16384, 65536, 16384, 4096, 4096, 8192, 32768];

    fn inputs(e: Vec<u32>, num_groups: usize, head_dim: usize) -> PlanInputs {
        PlanInputs {
            head_dim,
            train_length: 8192,
            target_length: 131072,
            num_groups,
            window: 1024,
            effective_lengths: e,
            key_dims: vec![(0..48).collect(); 2],
            clamp: true,
        }
    }

    #[test]
    fn standard_map_is_identity() {
        for rel in [0, 4, 131071] {
            assert_eq!(map_standard(rel).unwrap(), rel as u32);
        }
        assert_eq!(map_standard(-1), Err(Error::NegativeDistance(-1)));
    }

    #[test]
    fn rerope_truncates() {
        assert_eq!(map_rerope(3000, 2048).unwrap(), 2048);
        assert_eq!(map_rerope(100, 2048).unwrap(), 100);
        assert_eq!(map_rerope(2048, 2048).unwrap(), 2048);
        assert!(map_rerope(-3, 2048).is_err());
        assert!(map_rerope(3, -1).is_err());
    }

    #[test]
    fn self_extend_groups() {
        assert_eq!(map_self_extend(1056, 1024, 32).unwrap(), 1025);
        assert_eq!(map_self_extend(1024, 1024, 32).unwrap(), 1024);
        assert_eq!(map_self_extend(0, 1024, 32).unwrap(), 0);
        assert!(matches!(map_self_extend(5, 1024, 0), Err(Error::MapParameter(_))));
    }

    #[test]
    fn detection_map() {
        assert_eq!(map_detection(65536, 4096, 1024, 131072).unwrap(), 3040);
        assert_eq!(map_detection(1024, 4096, 1024, 131072).unwrap(), 1024);
        // One step past the window with t < L rounds down onto the window.
        assert_eq!(map_detection(1025, 4096, 1024, 131072).unwrap(), 1024);
        assert_eq!(map_detection(1025, 131072, 1024, 131072).unwrap(), 1025);
        assert!(matches!(map_detection(5, 4096, 1024, 1024), Err(Error::MapParameter(_))));
    }

    #[test]
    fn dpe_map() {
        assert_eq!(map_dpe(4224, 32, 1024, 4096, false).unwrap(), 1124);
        assert_eq!(map_dpe(7, 2, 2, 5, false).unwrap(), 4);
        assert_eq!(map_dpe(131071, 2, 1024, 65536, false).unwrap(), 66047);
        assert_eq!(map_dpe(131071, 2, 1024, 65536, true).unwrap(), 65536);
        assert!(matches!(map_dpe(5, 0, 2, 5, false), Err(Error::MapParameter(_))));
        assert!(matches!(map_dpe(5, 2, 8, 8, true), Err(Error::MapParameter(_))));
    }

    #[test]
    fn plan_reproduces_scale_sizes() {
        let plan = DimensionPlan::build(inputs(REFERENCE_E.to_vec(), 8, 128)).unwrap();
        assert_eq!(plan.scale_sizes, [2, 8, 2, 8, 32, 32, 16, 4]);
        assert_eq!(plan.groups[0], [0, 8]);
        assert_eq!(plan.groups[7], [56, 64]);
        assert!(plan.warnings().is_empty());
    }

    #[test]
    fn plan_at_effective_length_is_unscaled() {
        let mut i = inputs(vec![4096; 8], 8, 128);
        i.target_length = 4096;
        i.train_length = 4096;
        let plan = DimensionPlan::build(i).unwrap();
        assert!(plan.scale_sizes.iter().all(|&s| s == 1));
        assert_eq!(plan.group_map(0).apply(3000), 3000);
    }

    #[test]
    fn plan_rejects_bad_inputs() {
        assert!(DimensionPlan::build(inputs(vec![4096; 7], 8, 128)).is_err());
        assert!(DimensionPlan::build(inputs(vec![1024; 8], 8, 128)).is_err());
        let mut short = inputs(REFERENCE_E.to_vec(), 8, 128);
        short.target_length = 4096;
        assert!(DimensionPlan::build(short).is_err());
        let mut ragged = inputs(REFERENCE_E.to_vec(), 8, 128);
        ragged.key_dims = vec![vec![0, 1], vec![3]];
        assert!(DimensionPlan::build(ragged).is_err());
        let mut outside = inputs(REFERENCE_E.to_vec(), 8, 128);
        outside.key_dims = vec![vec![64]];
        assert!(DimensionPlan::build(outside).is_err());
    }

    #[test]
    fn remainder_group_warns() {
        let plan = DimensionPlan::build(inputs(vec![4096; 7], 7, 128)).unwrap();
        assert_eq!(plan.groups[6], [54, 64]);
        assert_eq!(
            plan.warnings(),
            vec![PlanWarning::RemainderGroup {
                num_pairs: 64,
                num_groups: 7,
                last_group_size: 10
            }]
        );
        let layout = plan.layout();
        assert_eq!(layout.group_of(63), 6);
        assert_eq!(layout.group_of(53), 5);
    }

    #[test]
    fn empty_key_sets_warn() {
        let mut i = inputs(REFERENCE_E.to_vec(), 8, 128);
        i.key_dims = vec![vec![], vec![]];
        let plan = DimensionPlan::build(i).unwrap();
        assert_eq!(plan.warnings(), vec![PlanWarning::EmptyKeySets]);
        assert_eq!(plan.pair_map(1, 40), PositionMap::Standard);
    }

    #[test]
    fn pair_map_uses_group_of_key_pair() {
        let mut i = inputs(REFERENCE_E.to_vec(), 8, 128);
        i.key_dims = vec![vec![47, 29]];
        let plan = DimensionPlan::build(i).unwrap();
        assert_eq!(plan.key_dims[0], [29, 47]);
        assert_eq!(plan.pair_map(0, 29), plan.group_map(3));
        assert_eq!(plan.pair_map(0, 47), plan.group_map(5));
        assert_eq!(plan.pair_map(0, 30), PositionMap::Standard);
    }

    #[test]
    fn grouped_offset_can_deviate_by_two() {
        // s does not divide w: the per-token grouped form overshoots.
        let split = SplitIndex::new(32, 16, SplitForm::GroupedOffset).unwrap();
        let exact = PositionMap::Dpe {
            scale: 32,
            window: 16,
            effective: u32::MAX,
            clamp: false,
        };
        assert_eq!(split.relative(64, 29), 18);
        assert_eq!(exact.apply(35), 16);
        let shifted = SplitIndex::new(32, 16, SplitForm::Shifted).unwrap();
        assert_eq!(shifted.relative(64, 29), 17);
    }
}
