//! Token ids, next-token distributions and sampling.

use rand::Rng;
use thiserror::Error;

/// Index of a token in the vocabulary.
pub type TokenId = u32;

/// Tolerance on the total mass of a [`Distribution`].
pub const MASS_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DistributionError {
    #[error("distribution over an empty vocabulary")]
    Empty,
    #[error("entry {index} is negative or not finite ({value})")]
    BadEntry { index: usize, value: f64 },
    #[error("entries sum to {0}, expected 1")]
    BadMass(f64),
}

/// A normalized probability vector over the vocabulary.
///
/// Construction validates that every entry is finite and non-negative and that
/// the entries sum to one within [`MASS_TOLERANCE`].
#[derive(Debug, Clone, PartialEq)]
pub struct Distribution {
    probs: Vec<f64>,
}

impl Distribution {
    pub fn new(probs: Vec<f64>) -> Result<Self, DistributionError> {
        if probs.is_empty() {
            return Err(DistributionError::Empty);
        }
        for (index, &value) in probs.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(DistributionError::BadEntry { index, value });
            }
        }
        let mass: f64 = probs.iter().sum();
        if (mass - 1.0).abs() > MASS_TOLERANCE {
            return Err(DistributionError::BadMass(mass));
        }
        Ok(Self { probs })
    }

    /// Normalizes non-negative weights. Fails if all weights are zero.
    pub fn from_weights(weights: Vec<f64>) -> Result<Self, DistributionError> {
        if weights.is_empty() {
            return Err(DistributionError::Empty);
        }
        for (index, &value) in weights.iter().enumerate() {
            if !value.is_finite() || value < 0.0 {
                return Err(DistributionError::BadEntry { index, value });
            }
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(DistributionError::BadMass(total));
        }
        Ok(Self {
            probs: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn uniform(size: usize) -> Result<Self, DistributionError> {
        if size == 0 {
            return Err(DistributionError::Empty);
        }
        Ok(Self {
            probs: vec![1.0 / size as f64; size],
        })
    }

    /// All mass on `token`.
    pub fn one_hot(size: usize, token: TokenId) -> Result<Self, DistributionError> {
        let mut probs = vec![0.0; size];
        match probs.get_mut(token as usize) {
            Some(p) => *p = 1.0,
            None if size == 0 => return Err(DistributionError::Empty),
            None => return Err(DistributionError::BadMass(0.0)),
        }
        Ok(Self { probs })
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Probability of `token`, zero when out of range.
    pub fn prob(&self, token: TokenId) -> f64 {
        self.probs.get(token as usize).copied().unwrap_or(0.0)
    }

    /// Highest-probability token; ties go to the lowest id.
    pub fn argmax(&self) -> TokenId {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate().skip(1) {
            if p > self.probs[best] {
                best = i;
            }
        }
        best as TokenId
    }

    /// Token ids sorted by descending probability, ties by ascending id.
    pub fn ranking(&self) -> Vec<TokenId> {
        let mut ids: Vec<TokenId> = (0..self.probs.len() as TokenId).collect();
        ids.sort_by(|&a, &b| {
            self.probs[b as usize]
                .total_cmp(&self.probs[a as usize])
                .then(a.cmp(&b))
        });
        ids
    }

    /// 0-based position of `token` in [`Distribution::ranking`], computed
    /// without sorting.
    pub fn rank_of(&self, token: TokenId) -> usize {
        let p = self.prob(token);
        self.probs
            .iter()
            .enumerate()
            .filter(|&(i, &q)| q > p || (q == p && (i as TokenId) < token))
            .count()
    }

    /// Rescales by `p^(1/t)`. Temperature 1 returns an identical copy; 0 collapses
    /// onto the argmax.
    pub fn with_temperature(&self, temperature: f64) -> Distribution {
        if temperature == 1.0 {
            return self.clone();
        }
        if temperature <= 0.0 {
            let mut probs = vec![0.0; self.probs.len()];
            probs[self.argmax() as usize] = 1.0;
            return Distribution { probs };
        }
        let inv = 1.0 / temperature;
        let weights: Vec<f64> = self.probs.iter().map(|&p| p.powf(inv)).collect();
        Distribution::from_weights(weights).unwrap_or_else(|_| self.clone())
    }

    /// Exact categorical draw by inverse CDF.
    pub fn sample_categorical<R: Rng + ?Sized>(&self, rng: &mut R) -> TokenId {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut last_nonzero = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > 0.0 {
                acc += p;
                last_nonzero = i;
                if u < acc {
                    return i as TokenId;
                }
            }
        }
        // rounding left `u` above the accumulated mass
        last_nonzero as TokenId
    }
}

/// Draws a token: argmax at temperature 0, otherwise a categorical draw from the
/// tempered distribution.
pub fn sample<R: Rng + ?Sized>(dist: &Distribution, temperature: f64, rng: &mut R) -> TokenId {
    if temperature <= 0.0 {
        dist.argmax()
    } else if temperature == 1.0 {
        dist.sample_categorical(rng)
    } else {
        dist.with_temperature(temperature).sample_categorical(rng)
    }
}

/// Total-variation distance between two equally sized probability vectors.
pub fn total_variation(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}
