//! The three group-emotion classes and probability vectors over them.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Number of emotion classes.
pub const NUM_CLASSES: usize = 3;

/// Group emotion class. The discriminant order is the global tie-break order:
/// whenever two classes score equally the lower index wins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Emotion {
    Positive = 0,
    Neutral = 1,
    Negative = 2,
}

impl Emotion {
    pub const ALL: [Emotion; NUM_CLASSES] = [Emotion::Positive, Emotion::Neutral, Emotion::Negative];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Emotion> {
        Emotion::ALL.get(index).copied()
    }

    /// Lowercase name, also used as the dataset sub-directory name.
    pub fn name(self) -> &'static str {
        match self {
            Emotion::Positive => "positive",
            Emotion::Neutral => "neutral",
            Emotion::Negative => "negative",
        }
    }

    pub fn one_hot(self) -> [f64; NUM_CLASSES] {
        let mut t = [0.0; NUM_CLASSES];
        t[self.index()] = 1.0;
        t
    }
}

impl fmt::Display for Emotion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Emotion {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "0" => Ok(Emotion::Positive),
            "neutral" | "1" => Ok(Emotion::Neutral),
            "negative" | "2" => Ok(Emotion::Negative),
            other => Err(Error::Data(format!("unknown emotion class '{other}'"))),
        }
    }
}

/// Index of the largest value; ties resolve to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// A probability vector over the three emotions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmotionDistribution([f64; NUM_CLASSES]);

impl EmotionDistribution {
    /// Tolerance accepted on the sum of a distribution built with [`EmotionDistribution::new`].
    pub const SUM_TOLERANCE: f64 = 1e-9;

    /// Validates that `probs` is non-negative, finite and sums to one.
    pub fn new(probs: [f64; NUM_CLASSES]) -> Result<Self> {
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(Error::Data(format!("invalid probabilities {probs:?}")));
        }
        let sum: f64 = probs.iter().sum();
        if (sum - 1.0).abs() > Self::SUM_TOLERANCE {
            return Err(Error::Data(format!(
                "probabilities {probs:?} sum to {sum}, not 1"
            )));
        }
        Ok(EmotionDistribution(probs))
    }

    /// Normalizes non-negative weights into a distribution.
    pub fn from_weights(weights: [f64; NUM_CLASSES]) -> Result<Self> {
        let sum: f64 = weights.iter().sum();
        if !(sum.is_finite() && sum > 0.0) || weights.iter().any(|w| *w < 0.0) {
            return Err(Error::Data(format!("cannot normalize weights {weights:?}")));
        }
        Ok(EmotionDistribution(weights.map(|w| w / sum)))
    }

    /// Normalizes log-weights with the max-subtraction trick.
    pub fn from_log_weights(log_weights: [f64; NUM_CLASSES]) -> Result<Self> {
        let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY || max.is_nan() {
            return Err(Error::Data(format!(
                "all classes have zero probability ({log_weights:?})"
            )));
        }
        Self::from_weights(log_weights.map(|l| (l - max).exp()))
    }

    pub fn uniform() -> Self {
        EmotionDistribution([1.0 / 3.0; NUM_CLASSES])
    }

    pub fn probs(&self) -> &[f64; NUM_CLASSES] {
        &self.0
    }

    pub fn get(&self, class: Emotion) -> f64 {
        self.0[class.index()]
    }

    /// Most probable class under the global tie-break rule.
    pub fn argmax(&self) -> Emotion {
        Emotion::ALL[argmax(&self.0)]
    }
}

impl fmt::Display for EmotionDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "positive={:.4} neutral={:.4} negative={:.4}",
            self.0[0], self.0[1], self.0[2]
        )
    }
}
