//! Multi-indices: fixed-length vectors of non-negative integers used to
//! address mixed partial derivatives, monomials and mixed moments.
//!
//! Enumeration order is graded lexicographic: indices are grouped by total
//! order, and within one total order the first entry decreases fastest,
//! e.g. for two dimensions `0:0, 1:0, 0:1, 2:0, 1:1, 0:2`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Largest expansion order accepted anywhere in the library.
pub const MAX_ORDER: usize = 10;

#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct MultiIndex(Vec<u32>);

impl MultiIndex {
    pub fn new(entries: Vec<u32>) -> Self {
        MultiIndex(entries)
    }

    pub fn zeros(dim: usize) -> Self {
        MultiIndex(vec![0; dim])
    }

    /// Unit index `e_k` of the given dimension.
    pub fn unit(dim: usize, k: usize) -> Self {
        let mut e = vec![0; dim];
        e[k] = 1;
        MultiIndex(e)
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn entries(&self) -> &[u32] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&e| e == 0)
    }

    /// `|r|`, the sum of the entries.
    pub fn total_order(&self) -> usize {
        self.0.iter().map(|&e| e as usize).sum()
    }

    /// `r!`, the product of entrywise factorials.
    pub fn factorial(&self) -> Result<u64> {
        self.0.iter().try_fold(1u64, |acc, &e| {
            acc.checked_mul(factorial_u64(e)?)
                .ok_or(Error::Overflow("multi-index factorial"))
        })
    }

    /// Product of entrywise binomial coefficients `C(r, lower)`.
    pub fn binomial(&self, lower: &MultiIndex) -> Result<u64> {
        self.check_dim(lower)?;
        if !lower.le(self) {
            return Err(Error::NotBounded {
                lower: lower.to_string(),
                upper: self.to_string(),
            });
        }
        self.0.iter().zip(&lower.0).try_fold(1u64, |acc, (&n, &k)| {
            acc.checked_mul(binomial_u64(n, k)?)
                .ok_or(Error::Overflow("multi-index binomial"))
        })
    }

    /// Entrywise `self <= other`. Indices of different length are never ordered.
    pub fn le(&self, other: &MultiIndex) -> bool {
        self.dim() == other.dim() && self.0.iter().zip(&other.0).all(|(a, b)| a <= b)
    }

    pub fn checked_add(&self, other: &MultiIndex) -> Result<MultiIndex> {
        self.check_dim(other)?;
        Ok(MultiIndex(
            self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect(),
        ))
    }

    pub fn checked_sub(&self, other: &MultiIndex) -> Result<MultiIndex> {
        self.check_dim(other)?;
        if !other.le(self) {
            return Err(Error::NotBounded {
                lower: other.to_string(),
                upper: self.to_string(),
            });
        }
        Ok(MultiIndex(
            self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect(),
        ))
    }

    /// All `r' <= self` entrywise, in graded lexicographic order.
    pub fn lower_set(&self) -> Vec<MultiIndex> {
        enumerate_up_to(self.dim().max(1), self.total_order())
            .into_iter()
            .filter(|r| r.dim() == self.dim() && r.le(self))
            .collect()
    }

    /// `x^r = Π x_k^{r_k}`.
    pub fn monomial(&self, x: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(x)
            .map(|(&e, &xi)| xi.powi(e as i32))
            .product()
    }

    fn check_dim(&self, other: &MultiIndex) -> Result<()> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: other.dim(),
            });
        }
        Ok(())
    }
}

impl From<Vec<u32>> for MultiIndex {
    fn from(v: Vec<u32>) -> Self {
        MultiIndex(v)
    }
}

impl<const N: usize> From<[u32; N]> for MultiIndex {
    fn from(v: [u32; N]) -> Self {
        MultiIndex(v.to_vec())
    }
}

impl fmt::Display for MultiIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(":")?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl FromStr for MultiIndex {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        s.split(':')
            .map(|p| {
                p.trim()
                    .parse::<u32>()
                    .map_err(|e| Error::InvalidArgument(format!("multi-index `{s}`: {e}")))
            })
            .collect::<Result<Vec<_>>>()
            .map(MultiIndex)
    }
}

impl Serialize for MultiIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MultiIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn factorial_u64(n: u32) -> Result<u64> {
    (1..=n as u64).try_fold(1u64, |acc, i| {
        acc.checked_mul(i).ok_or(Error::Overflow("factorial"))
    })
}

fn binomial_u64(n: u32, k: u32) -> Result<u64> {
    let k = k.min(n - k) as u64;
    let n = n as u64;
    // C(n, i+1) = C(n, i) * (n - i) / (i + 1) stays integral at every step.
    (0..k).try_fold(1u64, |acc, i| {
        acc.checked_mul(n - i)
            .map(|v| v / (i + 1))
            .ok_or(Error::Overflow("binomial"))
    })
}

/// All multi-indices of dimension `dim` with `|r| <= max_order`, graded
/// lexicographic. The result has `C(max_order + dim, dim)` entries.
pub fn enumerate_up_to(dim: usize, max_order: usize) -> Vec<MultiIndex> {
    let mut out = Vec::new();
    for order in 0..=max_order {
        let mut current = vec![0u32; dim];
        compositions(order as u32, 0, &mut current, &mut out);
    }
    out
}

fn compositions(remaining: u32, pos: usize, current: &mut Vec<u32>, out: &mut Vec<MultiIndex>) {
    if pos + 1 == current.len() {
        current[pos] = remaining;
        out.push(MultiIndex(current.clone()));
        return;
    }
    if current.is_empty() {
        if remaining == 0 {
            out.push(MultiIndex(Vec::new()));
        }
        return;
    }
    for e in (0..=remaining).rev() {
        current[pos] = e;
        compositions(remaining - e, pos + 1, current, out);
    }
    current[pos] = 0;
}

/// Number of multi-indices of dimension `dim` with `|r| <= max_order`.
pub fn count_up_to(dim: usize, max_order: usize) -> usize {
    binomial_u64((max_order + dim) as u32, dim as u32).unwrap_or(usize::MAX as u64) as usize
}

/// Multi-index packed into 4-bit slots of a `u64`, used as a hash key in
/// the moment recursion. Valid while every entry is at most 15 and the
/// index has at most 16 entries.
pub(crate) mod packed {
    pub const SLOT_BITS: u32 = 4;
    pub const MAX_SLOTS: usize = 16;

    pub fn pack(entries: &[u32]) -> u64 {
        debug_assert!(entries.len() <= MAX_SLOTS);
        entries.iter().enumerate().fold(0u64, |acc, (i, &e)| {
            debug_assert!(e < 16);
            acc | ((e as u64) << (SLOT_BITS * i as u32))
        })
    }

    pub fn unpack(key: u64, len: usize) -> Vec<u32> {
        (0..len)
            .map(|i| ((key >> (SLOT_BITS * i as u32)) & 0xF) as u32)
            .collect()
    }

    /// Mask covering the first `len` slots.
    pub fn mask(len: usize) -> u64 {
        if len >= MAX_SLOTS {
            u64::MAX
        } else {
            (1u64 << (SLOT_BITS * len as u32)) - 1
        }
    }
}
