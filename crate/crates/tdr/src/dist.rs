//! Probability distributions over contiguous ranges of integer states.

use crate::error::{Result, TdrError};
use rand::Rng;

/// A distribution on the states `offset, offset + 1, ..., offset + len - 1`.
/// States outside the stored range carry probability zero.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDist {
    offset: usize,
    probs: Vec<f64>,
}

impl StateDist {
    /// Builds a distribution from explicit probabilities. The entries must be
    /// finite, nonnegative, and sum to one within `1e-8`.
    pub fn new(offset: usize, probs: Vec<f64>) -> Result<Self> {
        if probs.is_empty() {
            return Err(TdrError::InvalidInput("empty distribution".into()));
        }
        let mut sum = 0.0;
        for (i, &p) in probs.iter().enumerate() {
            if !p.is_finite() || p < 0.0 {
                return Err(TdrError::InvalidInput(format!(
                    "probability of state {} is {p}",
                    offset + i
                )));
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-8 {
            return Err(TdrError::InvalidInput(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(Self { offset, probs })
    }

    /// Builds a distribution by normalizing nonnegative weights.
    pub fn from_weights(offset: usize, weights: Vec<f64>) -> Result<Self> {
        let total: f64 = weights.iter().sum();
        if !total.is_finite() || total <= 0.0 {
            return Err(TdrError::InvalidInput(format!(
                "weights sum to {total}, expected a positive total"
            )));
        }
        let probs = weights.into_iter().map(|w| w / total).collect();
        Self::new(offset, probs)
    }

    pub fn point_mass(state: usize) -> Self {
        Self { offset: state, probs: vec![1.0] }
    }

    pub fn offset(&self) -> usize {
        self.offset
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn max_state(&self) -> usize {
        self.offset + self.probs.len() - 1
    }

    pub fn prob(&self, state: usize) -> f64 {
        if state < self.offset {
            return 0.0;
        }
        self.probs.get(state - self.offset).copied().unwrap_or(0.0)
    }

    /// Iterates over `(state, probability)` pairs in state order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.probs.iter().enumerate().map(|(i, &p)| (self.offset + i, p))
    }

    pub fn expectation(&self, f: impl Fn(usize) -> f64) -> f64 {
        self.iter().map(|(s, p)| p * f(s)).sum()
    }

    /// Total variation distance, accounting for non-overlapping supports.
    pub fn total_variation(&self, other: &Self) -> f64 {
        let lo = self.offset.min(other.offset);
        let hi = self.max_state().max(other.max_state());
        let mut acc = 0.0;
        for s in lo..=hi {
            acc += (self.prob(s) - other.prob(s)).abs();
        }
        0.5 * acc
    }

    /// Samples a state by inverting the cumulative distribution.
    pub fn sample(&self, rng: &mut impl Rng) -> usize {
        let u: f64 = rng.random();
        let mut cum = 0.0;
        for (s, p) in self.iter() {
            cum += p;
            if u < cum {
                return s;
            }
        }
        self.max_state()
    }
}
