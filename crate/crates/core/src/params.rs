//! Flat parameter vectors: the unit of federated exchange.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamVec<F>(pub Vec<F>);

impl<F: Scalar> ParamVec<F> {
    pub fn zeros(len: usize) -> Self {
        ParamVec(vec![F::zero(); len])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[F] {
        &self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, F> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    fn check_len(&self, other: &Self) -> Result<()> {
        if self.len() != other.len() {
            return Err(Error::Dimension {
                expected: self.len(),
                got: other.len(),
            });
        }
        Ok(())
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.check_len(other)?;
        Ok(ParamVec(self.0.iter().zip(&other.0).map(|(a, b)| *a - *b).collect()))
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.check_len(other)?;
        Ok(ParamVec(self.0.iter().zip(&other.0).map(|(a, b)| *a + *b).collect()))
    }

    /// `self + factor * other`.
    pub fn add_scaled(&self, other: &Self, factor: F) -> Result<Self> {
        self.check_len(other)?;
        Ok(ParamVec(
            self.0.iter().zip(&other.0).map(|(a, b)| *a + factor * *b).collect(),
        ))
    }

    pub fn scale(&self, factor: F) -> Self {
        ParamVec(self.0.iter().map(|v| *v * factor).collect())
    }

    pub fn dot(&self, other: &Self) -> Result<F> {
        self.check_len(other)?;
        Ok(self.0.iter().zip(&other.0).map(|(a, b)| *a * *b).sum())
    }

    pub fn norm(&self) -> F {
        self.0.iter().map(|v| *v * *v).sum::<F>().sqrt()
    }

    /// Length-prefixed little-endian encoding: a `u64` count followed by
    /// that many `f64` values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 8 * self.len());
        out.extend_from_slice(&(self.len() as u64).to_le_bytes());
        for v in &self.0 {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
        out
    }

    /// Decodes one vector from the front of `bytes`, returning it and the
    /// number of bytes consumed.
    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, usize)> {
        let short = || Error::Schema("truncated parameter vector".into());
        let len = u64::from_le_bytes(bytes.get(..8).ok_or_else(short)?.try_into().expect("8 bytes")) as usize;
        let end = len.checked_mul(8).and_then(|n| n.checked_add(8)).ok_or_else(short)?;
        let body = bytes.get(8..end).ok_or_else(short)?;
        let values = body
            .chunks_exact(8)
            .map(|c| F::lit(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
            .collect();
        Ok((ParamVec(values), end))
    }
}

impl<F> Index<usize> for ParamVec<F> {
    type Output = F;

    fn index(&self, i: usize) -> &F {
        &self.0[i]
    }
}

impl<F> IndexMut<usize> for ParamVec<F> {
    fn index_mut(&mut self, i: usize) -> &mut F {
        &mut self.0[i]
    }
}

impl<F> From<Vec<F>> for ParamVec<F> {
    fn from(v: Vec<F>) -> Self {
        ParamVec(v)
    }
}
