//! Rotary position embedding primitives.
//!
//! Pair `j` of a `d`-dimensional vector is the sub-vector `(v[2j], v[2j+1])`
//! and rotates with angular frequency `thetas[j]`. Position indices are
//! per pair, so a vector can sit at different positions in different
//! frequency subspaces.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::{Error, Result};

/// Default rotary base.
pub const DEFAULT_BASE: f64 = 10_000.0;

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case"))]
pub enum Scaling {
    None,
    /// Base rescaling `b' = b * factor^(d / (d - 2))`.
    NtkDynamic { factor: f64 },
    /// Per-frequency blend between interpolated (`theta / scale`) and
    /// original frequencies, ramped over the number of full rotations a
    /// pair completes within `original_length` tokens.
    YarnByParts {
        beta_fast: f64,
        beta_slow: f64,
        scale: f64,
        attn_factor: f64,
        original_length: u32,
    },
}

impl Scaling {
    fn validate(&self) -> Result<()> {
        match *self {
            Scaling::None => Ok(()),
            Scaling::NtkDynamic { factor } => {
                if !factor.is_finite() || factor <= 0.0 {
                    return Err(Error::Scaling(format!("NTK factor must be finite and positive, got {factor}")));
                }
                Ok(())
            }
            Scaling::YarnByParts {
                beta_fast,
                beta_slow,
                scale,
                attn_factor,
                original_length,
            } => {
                for (name, v) in [
                    ("beta_fast", beta_fast),
                    ("beta_slow", beta_slow),
                    ("scale", scale),
                    ("attn_factor", attn_factor),
                ] {
                    if !v.is_finite() {
                        return Err(Error::Scaling(format!("YaRN {name} is not finite")));
                    }
                }
                if beta_fast <= beta_slow {
                    return Err(Error::Scaling(format!(
                        "YaRN beta_fast ({beta_fast}) must exceed beta_slow ({beta_slow})"
                    )));
                }
                if scale < 1.0 {
                    return Err(Error::Scaling(format!("YaRN scale must be >= 1, got {scale}")));
                }
                if attn_factor <= 0.0 {
                    return Err(Error::Scaling(format!("YaRN attn_factor must be positive, got {attn_factor}")));
                }
                if original_length == 0 {
                    return Err(Error::Scaling("YaRN original_length must be positive".into()));
                }
                Ok(())
            }
        }
    }
}

/// Angular frequencies of a rotary embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyBasis {
    head_dim: usize,
    base: f64,
    thetas: Vec<f64>,
    scaling: Scaling,
}

impl FrequencyBasis {
    pub fn new(head_dim: usize, base: f64, scaling: Scaling) -> Result<Self> {
        if head_dim < 2 || !head_dim.is_multiple_of(2) {
            return Err(Error::HeadDim(head_dim));
        }
        if !base.is_finite() || base <= 1.0 {
            return Err(Error::Base(base));
        }
        scaling.validate()?;

        let d = head_dim as f64;
        let effective_base = match scaling {
            // d = 2 has a single pair with theta = 1 regardless of base.
            Scaling::NtkDynamic { factor } if head_dim > 2 => base * libm::pow(factor, d / (d - 2.0)),
            _ => base,
        };
        if !effective_base.is_finite() || effective_base <= 1.0 {
            return Err(Error::Scaling(format!("rescaled base {effective_base} is not a valid base")));
        }

        let mut thetas: Vec<f64> = (0..head_dim / 2)
            .map(|j| libm::pow(effective_base, -2.0 * j as f64 / d))
            .collect();

        if let Scaling::YarnByParts {
            beta_fast,
            beta_slow,
            scale,
            original_length,
            ..
        } = scaling
        {
            for theta in &mut thetas {
                let rotations = original_length as f64 * *theta / (2.0 * PI);
                let ramp = ((rotations - beta_slow) / (beta_fast - beta_slow)).clamp(0.0, 1.0);
                *theta *= (1.0 - ramp) / scale + ramp;
            }
        }

        Ok(Self {
            head_dim,
            base,
            thetas,
            scaling,
        })
    }

    /// Unscaled basis with the default base.
    pub fn standard(head_dim: usize) -> Result<Self> {
        Self::new(head_dim, DEFAULT_BASE, Scaling::None)
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn num_pairs(&self) -> usize {
        self.thetas.len()
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn thetas(&self) -> &[f64] {
        &self.thetas
    }

    pub fn scaling(&self) -> Scaling {
        self.scaling
    }

    /// Multiplicative logit temperature implied by the scaling mode.
    pub fn logit_multiplier(&self) -> f64 {
        match self.scaling {
            Scaling::YarnByParts { attn_factor, .. } => attn_factor,
            _ => 1.0,
        }
    }

    fn check_len(&self, what: &'static str, expected: usize, actual: usize) -> Result<()> {
        if expected != actual {
            return Err(Error::LengthMismatch { what, expected, actual });
        }
        Ok(())
    }
}

/// A vector after rotation, together with the per-pair indices used.
#[derive(Debug, Clone, PartialEq)]
pub struct RotatedVector {
    pub values: Vec<f32>,
    pub position_index: Vec<u32>,
}

#[inline]
pub(crate) fn rotate_pair(x0: f64, x1: f64, cos: f64, sin: f64) -> (f64, f64) {
    (x0 * cos - x1 * sin, x0 * sin + x1 * cos)
}

/// `q_pair^T R(angle) k_pair` given `cos`/`sin` of the angle.
#[inline]
pub(crate) fn pair_score(q0: f64, q1: f64, k0: f64, k1: f64, cos: f64, sin: f64) -> f64 {
    q0 * (cos * k0 - sin * k1) + q1 * (sin * k0 + cos * k1)
}

fn rotate_signed(basis: &FrequencyBasis, vec: &[f32], position_index: &[u32], sign: f64) -> Result<Vec<f32>> {
    basis.check_len("vector", basis.head_dim, vec.len())?;
    basis.check_len("position index", basis.num_pairs(), position_index.len())?;
    let mut out = Vec::with_capacity(vec.len());
    for (j, (&theta, &pos)) in basis.thetas.iter().zip(position_index).enumerate() {
        let angle = sign * pos as f64 * theta;
        let (y0, y1) = rotate_pair(vec[2 * j] as f64, vec[2 * j + 1] as f64, libm::cos(angle), libm::sin(angle));
        out.push(y0 as f32);
        out.push(y1 as f32);
    }
    Ok(out)
}

/// Rotate each pair `j` by `position_index[j] * thetas[j]`.
pub fn rotate(basis: &FrequencyBasis, vec: &[f32], position_index: &[u32]) -> Result<RotatedVector> {
    Ok(RotatedVector {
        values: rotate_signed(basis, vec, position_index, 1.0)?,
        position_index: position_index.to_vec(),
    })
}

/// Inverse of [`rotate`]: rotation by the negated angles.
pub fn rotate_inverse(basis: &FrequencyBasis, vec: &[f32], position_index: &[u32]) -> Result<Vec<f32>> {
    rotate_signed(basis, vec, position_index, -1.0)
}

/// `sum_j q_j^T R(thetas[j] * rel_index[j]) k_j`, evaluated in double
/// precision. With a constant `rel_index = r` this equals
/// `rotate(q, m) . rotate(k, m + r)` for any `m`.
pub fn relative_rotation_score(basis: &FrequencyBasis, q: &[f32], k: &[f32], rel_index: &[u32]) -> Result<f64> {
    basis.check_len("query", basis.head_dim, q.len())?;
    basis.check_len("key", basis.head_dim, k.len())?;
    basis.check_len("relative index", basis.num_pairs(), rel_index.len())?;
    let mut acc = 0.0;
    for (j, (&theta, &rel)) in basis.thetas.iter().zip(rel_index).enumerate() {
        let angle = rel as f64 * theta;
        acc += pair_score(
            q[2 * j] as f64,
            q[2 * j + 1] as f64,
            k[2 * j] as f64,
            k[2 * j + 1] as f64,
            libm::cos(angle),
            libm::sin(angle),
        );
    }
    Ok(acc)
}

/// `cos`/`sin` of `index * theta_j` for every pair and every index in
/// `0..=max_index`, laid out index-major.
#[derive(Debug, Clone)]
pub struct AngleTable {
    num_pairs: usize,
    entries: Vec<(f64, f64)>,
}

impl AngleTable {
    pub fn new(basis: &FrequencyBasis, max_index: u32) -> Self {
        let num_pairs = basis.num_pairs();
        let mut entries = Vec::with_capacity((max_index as usize + 1) * num_pairs);
        for index in 0..=max_index {
            for &theta in basis.thetas() {
                let angle = index as f64 * theta;
                entries.push((libm::cos(angle), libm::sin(angle)));
            }
        }
        Self { num_pairs, entries }
    }

    pub fn max_index(&self) -> u32 {
        (self.entries.len() / self.num_pairs - 1) as u32
    }

    #[inline]
    pub fn get(&self, index: u32, pair: usize) -> (f64, f64) {
        self.entries[index as usize * self.num_pairs + pair]
    }
}
