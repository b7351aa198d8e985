//! Reference implementations written directly from the definitions, kept
//! independent of the library code paths they check.

#![allow(dead_code, clippy::too_many_arguments)]

pub fn thetas(head_dim: usize, base: f64) -> Vec<f64> {
    (0..head_dim / 2)
        .map(|j| base.powf(-2.0 * j as f64 / head_dim as f64))
        .collect()
}

/// Rotate every pair of `v` by `index[j] * theta[j]` with an explicit 2x2
/// matrix product in double precision.
pub fn rotate_dense(v: &[f64], theta: &[f64], index: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    for j in 0..theta.len() {
        let a = index[j] * theta[j];
        let m = [[a.cos(), -a.sin()], [a.sin(), a.cos()]];
        for r in 0..2 {
            out[2 * j + r] = m[r][0] * v[2 * j] + m[r][1] * v[2 * j + 1];
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Dense causal attention for one head. `index(pair, m, n)` gives the
/// relative index of each pair; the query is rotated by it and the key
/// left in place, which matches rotating both at absolute positions when
/// the index is `m - n`.
pub fn attention_head(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    len: usize,
    dim: usize,
    value_dim: usize,
    theta: &[f64],
    scale: f64,
    index: impl Fn(usize, usize, usize) -> u64,
) -> Vec<f64> {
    let mut out = vec![0.0; len * value_dim];
    for m in 0..len {
        let qm: Vec<f64> = q[m * dim..(m + 1) * dim].iter().map(|&x| x as f64).collect();
        let mut logits = Vec::with_capacity(m + 1);
        for n in 0..=m {
            let kn: Vec<f64> = k[n * dim..(n + 1) * dim].iter().map(|&x| x as f64).collect();
            let idx: Vec<f64> = (0..dim / 2).map(|j| index(j, m, n) as f64).collect();
            logits.push(scale * dot(&rotate_dense(&qm, theta, &idx), &kn));
        }
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = weights.iter().sum();
        for (n, w) in weights.iter().enumerate() {
            for c in 0..value_dim {
                out[m * value_dim + c] += w / total * v[n * value_dim + c] as f64;
            }
        }
    }
    out
}

/// Same attention with both sides rotated at absolute positions.
pub fn attention_head_absolute(
    q: &[f32],
    k: &[f32],
    v: &[f32],
    len: usize,
    dim: usize,
    theta: &[f64],
    scale: f64,
) -> Vec<f64> {
    let rot = |x: &[f32], pos: usize| {
        let x: Vec<f64> = x.iter().map(|&a| a as f64).collect();
        rotate_dense(&x, theta, &vec![pos as f64; dim / 2])
    };
    let mut out = vec![0.0; len * dim];
    for m in 0..len {
        let qm = rot(&q[m * dim..(m + 1) * dim], m);
        let logits: Vec<f64> = (0..=m)
            .map(|n| scale * dot(&qm, &rot(&k[n * dim..(n + 1) * dim], n)))
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logits.iter().map(|l| (l - max).exp()).sum();
        for (n, l) in logits.iter().enumerate() {
            let w = (l - max).exp() / total;
            for c in 0..dim {
                out[m * dim + c] += w * v[n * dim + c] as f64;
            }
        }
    }
    out
}

pub fn rerope(rel: u64, w: u64) -> u64 {
    if rel > w {
        w
    } else {
        rel
    }
}

pub fn self_extend(rel: u64, w: u64, g: u64) -> u64 {
    if rel > w {
        w + (rel - w) / g
    } else {
        rel
    }
}

pub fn detection(rel: u64, t: u64, w: u64, ctx: u64) -> u64 {
    if rel > w {
        w + ((rel - w) as u128 * t as u128 / ctx as u128) as u64
    } else {
        rel
    }
}

pub fn dpe(rel: u64, s: u64, w: u64, e: u64, clamp: bool) -> u64 {
    let v = if rel > w { w + (rel - w) / s } else { rel };
    if clamp {
        v.min(e)
    } else {
        v
    }
}

/// Pair indices of the `k` largest scores, ties to the lower index, sorted.
pub fn top_k(scores: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    // Stable sort by descending score keeps lower indices first among ties.
    idx.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap());
    let mut chosen: Vec<usize> = idx.into_iter().take(k).collect();
    chosen.sort();
    chosen
}
