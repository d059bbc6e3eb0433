use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

/// Labels and predictions live in `[-LABEL_RANGE, LABEL_RANGE]`.
pub const LABEL_RANGE: f64 = 3.0;
pub const NUM_BUCKETS: usize = 7;

/// Index of the uniform bucket of `[-3, 3]` containing `clamp(y)`; the top
/// edge belongs to the last bucket.
pub fn bucket7(y: f64) -> usize {
    let width = 2.0 * LABEL_RANGE / NUM_BUCKETS as f64;
    let c = y.clamp(-LABEL_RANGE, LABEL_RANGE);
    (((c + LABEL_RANGE) / width).floor() as usize).min(NUM_BUCKETS - 1)
}

/// Sign convention: strictly positive scores are positive, zero is grouped
/// with the negatives.
#[inline]
pub fn is_positive(y: f64) -> bool {
    y > 0.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub score: f64,
    pub positive: bool,
    pub bucket: usize,
}

impl Prediction {
    pub fn from_score(score: f64) -> Self {
        Self { score, positive: is_positive(score), bucket: bucket7(score) }
    }
}

pub fn squared_error(prediction: f64, label: f64) -> f64 {
    (prediction - label) * (prediction - label)
}

/// Linear regression head on the pooled representation.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionHead {
    pub weight: Vec<f64>,
    pub bias: f64,
}

impl PredictionHead {
    pub fn zeros(input: usize) -> Self {
        Self { weight: vec![0.0; input], bias: 0.0 }
    }

    pub fn random<R: Rng + ?Sized>(input: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (1.0 / input.max(1) as f64).sqrt()).expect("positive std");
        Self { weight: (0..input).map(|_| normal.sample(rng)).collect(), bias: 0.0 }
    }

    pub fn num_params(&self) -> usize {
        self.weight.len() + 1
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.weight.clone();
        p.push(self.bias);
        p
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!("head expects {} parameters, got {}", self.num_params(), flat.len())));
        }
        let n = self.weight.len();
        self.weight.copy_from_slice(&flat[..n]);
        self.bias = flat[n];
        Ok(())
    }

    pub fn score(&self, pooled: &[f64]) -> Result<f64> {
        if pooled.len() != self.weight.len() {
            return Err(Error::Shape(format!("head expects {} inputs, got {}", self.weight.len(), pooled.len())));
        }
        Ok(self.weight.iter().zip(pooled).map(|(w, x)| w * x).sum::<f64>() + self.bias)
    }

    pub fn predict(&self, pooled: &[f64]) -> Result<Prediction> {
        Ok(Prediction::from_score(self.score(pooled)?))
    }

    /// `(parameter gradient, input gradient)` for upstream `d loss / d score`.
    pub fn backward(&self, pooled: &[f64], grad_score: f64) -> (Vec<f64>, Vec<f64>) {
        let mut g: Vec<f64> = pooled.iter().map(|x| x * grad_score).collect();
        g.push(grad_score);
        (g, self.weight.iter().map(|w| w * grad_score).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_head_predicts_negative_or_zero() {
        let p = PredictionHead::zeros(4).predict(&[1.0, -2.0, 3.0, 0.5]).unwrap();
        assert_eq!(p.score, 0.0);
        assert!(!p.positive);
        assert_eq!(p.bucket, 3);
    }

    #[test]
    fn bucket_edges() {
        // Edges at -3 + 6k/7.
        let width = 6.0 / 7.0;
        assert_eq!(bucket7(2.4), 6);
        assert_eq!(bucket7(2.4), ((2.4f64 + 3.0) / width) as usize);
        assert_eq!(bucket7(-3.0), 0);
        assert_eq!(bucket7(-10.0), 0);
        assert_eq!(bucket7(3.0), 6);
        assert_eq!(bucket7(10.0), 6);
        assert_eq!(bucket7(0.0), 3);
        for k in 1..7 {
            let edge = -3.0 + width * k as f64;
            assert_eq!(bucket7(edge + 1e-9), k);
            assert_eq!(bucket7(edge - 1e-9), k - 1);
        }
    }

    #[test]
    fn squared_error_zero_at_label() {
        assert_eq!(squared_error(1.25, 1.25), 0.0);
        assert_eq!(squared_error(1.0, -1.0), 4.0);
    }
}
