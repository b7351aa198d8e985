//! Tokenizer-free key-value retrieval task.
//!
//! A context is a run of `(key, value)` records followed by query keys.
//! Needle records use keys from a small reserved set, the rest of the
//! haystack uses filler keys, and each query asks for the value stored
//! under one needle key.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::{seed, Error, Result};

/// Token id ranges: needle keys, then filler keys, then values.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct Vocab {
    pub needle_keys: u32,
    pub filler_keys: u32,
    pub values: u32,
}

impl Default for Vocab {
    fn default() -> Self {
        Self {
            needle_keys: 4,
            filler_keys: 32,
            values: 16,
        }
    }
}

impl Vocab {
    pub fn size(&self) -> u32 {
        self.needle_keys + self.filler_keys + self.values
    }

    pub fn needle_key(&self, i: u32) -> u32 {
        i
    }

    pub fn filler_key(&self, i: u32) -> u32 {
        self.needle_keys + i
    }

    pub fn value(&self, i: u32) -> u32 {
        self.needle_keys + self.filler_keys + i
    }

    pub fn is_needle_key(&self, token: u32) -> bool {
        token < self.needle_keys
    }

    /// Index of a value token within the value range.
    pub fn value_index(&self, token: u32) -> Option<u32> {
        token
            .checked_sub(self.needle_keys + self.filler_keys)
            .filter(|&i| i < self.values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Needle {
    pub key: u32,
    pub value: u32,
    /// Position of the key token; the value follows it.
    pub position: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyntheticNiahTask {
    pub vocab: Vocab,
    pub tokens: Vec<u32>,
    pub needles: Vec<Needle>,
    /// Query keys, in the order they appear at the end of `tokens`.
    pub queries: Vec<u32>,
}

impl SyntheticNiahTask {
    pub fn context_length(&self) -> usize {
        self.tokens.len()
    }

    /// Positions of the query tokens.
    pub fn query_positions(&self) -> core::ops::Range<usize> {
        self.tokens.len() - self.queries.len()..self.tokens.len()
    }

    /// Expected value token for each query.
    pub fn answers(&self) -> Vec<u32> {
        self.queries
            .iter()
            .map(|q| self.needles.iter().find(|n| n.key == *q).expect("query has a needle").value)
            .collect()
    }

    /// Fraction of queries answered correctly; `None` when there are no
    /// queries.
    pub fn score(&self, predictions: &[Option<u32>]) -> Option<f64> {
        if self.queries.is_empty() {
            return None;
        }
        let correct = self
            .answers()
            .iter()
            .zip(predictions)
            .filter(|(a, p)| Some(**a) == **p)
            .count();
        Some(correct as f64 / self.queries.len() as f64)
    }
}

/// Generate a task of exactly `len` tokens with `num_needles` needles whose
/// depths are stratified across the haystack.
pub fn generate_niah(len: usize, num_needles: usize, vocab: Vocab, seed: u64) -> Result<SyntheticNiahTask> {
    if num_needles > vocab.needle_keys as usize {
        return Err(Error::Fixture(alloc::format!(
            "{num_needles} needles need distinct keys but only {} needle keys exist",
            vocab.needle_keys
        )));
    }
    if vocab.filler_keys == 0 || vocab.values == 0 {
        return Err(Error::Fixture("vocabulary needs filler keys and values".into()));
    }
    let needed = 3 * num_needles;
    if len < needed.max(1) {
        return Err(Error::ContextTooSmall { len, needed: needed.max(1) });
    }
    let mut rng = seed::rng(seed, "niah", len as u64);
    let records = (len - num_needles) / 2;
    let pad = len - num_needles - 2 * records;

    let mut keys: Vec<u32> = (0..vocab.needle_keys).map(|i| vocab.needle_key(i)).collect();
    keys.shuffle(&mut rng);
    keys.truncate(num_needles);

    let mut needle_records = Vec::with_capacity(num_needles);
    for i in 0..num_needles {
        let lo = i * records / num_needles;
        let hi = ((i + 1) * records / num_needles).max(lo + 1);
        needle_records.push(rng.random_range(lo..hi));
    }

    let mut tokens = Vec::with_capacity(len);
    for _ in 0..pad {
        tokens.push(vocab.filler_key(rng.random_range(0..vocab.filler_keys)));
    }
    let mut needles = Vec::with_capacity(num_needles);
    for r in 0..records {
        let value = vocab.value(rng.random_range(0..vocab.values));
        let key = match needle_records.iter().position(|&n| n == r) {
            Some(i) => {
                needles.push(Needle {
                    key: keys[i],
                    value,
                    position: tokens.len(),
                });
                keys[i]
            }
            None => vocab.filler_key(rng.random_range(0..vocab.filler_keys)),
        };
        tokens.push(key);
        tokens.push(value);
    }
    let mut queries = keys.clone();
    queries.shuffle(&mut rng);
    tokens.extend_from_slice(&queries);
    Ok(SyntheticNiahTask {
        vocab,
        tokens,
        needles,
        queries,
    })
}
