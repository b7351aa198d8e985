use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Result};

/// Dense `heads x len x dim` single-precision tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadTensor {
    heads: usize,
    len: usize,
    dim: usize,
    data: Vec<f32>,
}

impl HeadTensor {
    pub fn zeros(heads: usize, len: usize, dim: usize) -> Self {
        Self {
            heads,
            len,
            dim,
            data: vec![0.0; heads * len * dim],
        }
    }

    pub fn from_vec(heads: usize, len: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        let expected = heads * len * dim;
        if data.len() != expected {
            return Err(Error::LengthMismatch {
                what: "tensor data",
                expected,
                actual: data.len(),
            });
        }
        Ok(Self { heads, len, dim, data })
    }

    pub fn from_fn(heads: usize, len: usize, dim: usize, mut f: impl FnMut(usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(heads * len * dim);
        for h in 0..heads {
            for i in 0..len {
                for c in 0..dim {
                    data.push(f(h, i, c));
                }
            }
        }
        Self { heads, len, dim, data }
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.heads, self.len, self.dim]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn row(&self, head: usize, pos: usize) -> &[f32] {
        let start = (head * self.len + pos) * self.dim;
        &self.data[start..start + self.dim]
    }

    #[inline]
    pub fn row_mut(&mut self, head: usize, pos: usize) -> &mut [f32] {
        let start = (head * self.len + pos) * self.dim;
        &mut self.data[start..start + self.dim]
    }

    /// All rows of one head, `len * dim` values.
    pub fn head(&self, head: usize) -> &[f32] {
        let size = self.len * self.dim;
        &self.data[head * size..(head + 1) * size]
    }

    pub fn head_mut(&mut self, head: usize) -> &mut [f32] {
        let size = self.len * self.dim;
        &mut self.data[head * size..(head + 1) * size]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
