//! Small vector helpers shared by the poolers and the expert pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A one-hot vector stored by its hot index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OneHot {
    index: usize,
    len: usize,
}

impl OneHot {
    pub fn new(index: usize, len: usize) -> Self {
        assert!(index < len, "one-hot index {index} out of range {len}");
        OneHot { index, len }
    }

    /// Parses a dense vector; exactly one entry must be 1 and the rest 0.
    pub fn from_dense(x: &[f64]) -> Result<Self> {
        let mut hot = None;
        for (i, &v) in x.iter().enumerate() {
            if v == 1.0 {
                if hot.is_some() {
                    return Err(Error::NotOneHot { len: x.len() });
                }
                hot = Some(i);
            } else if v != 0.0 {
                return Err(Error::NotOneHot { len: x.len() });
            }
        }
        hot.map(|index| OneHot { index, len: x.len() })
            .ok_or(Error::NotOneHot { len: x.len() })
    }

    pub fn index(&self) -> usize {
        self.index
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn to_dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.len];
        v[self.index] = 1.0;
        v
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

/// Normalizes to a probability vector. All-zero input stays all-zero.
pub fn normalize(v: &[f64]) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter().map(|x| x / s).collect()
    } else {
        v.to_vec()
    }
}

pub fn normalize_in_place(v: &mut [f64]) {
    let s: f64 = v.iter().sum();
    if s > 0.0 {
        v.iter_mut().for_each(|x| *x /= s);
    }
}

/// Shannon entropy in bits.
pub fn entropy_bits(p: &[f64]) -> f64 {
    p.iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * x.log2())
        .sum()
}

/// KL(p || q) in nats. Entries are floored so the result stays finite.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    const FLOOR: f64 = 1e-300;
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a.max(FLOOR) / b.max(FLOOR)).ln())
        .sum()
}
