use crate::error::{Error, Result};
use crate::scalar::Real;

/// Multiplier applied to `t in [0, 1]` before the sinusoids. With it the
/// slowest pair turns through at most one radian over the whole horizon, so
/// the embedding is injective in `t` for `dim >= 4`.
const TIME_SCALE: f64 = 100.0;

/// Sinusoidal embedding of a diffusion time, built like the positional
/// encoding: pairs `(sin(s t w_k), cos(s t w_k))` with `w_k = 10000^(-2k/dim)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeEmbedding {
    dim: usize,
}

impl TimeEmbedding {
    pub fn new(dim: usize) -> Result<Self> {
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Shape(format!("time embedding dim must be even and positive, got {dim}")));
        }
        Ok(Self { dim })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frequencies<T: Real>(&self) -> Vec<T> {
        (0..self.dim / 2)
            .map(|k| T::lit(10000f64.powf(-(2.0 * k as f64) / self.dim as f64)))
            .collect()
    }

    pub fn embed_into<T: Real>(&self, t: T, out: &mut [T]) {
        debug_assert_eq!(out.len(), self.dim);
        for (k, w) in self.frequencies::<T>().into_iter().enumerate() {
            let angle = T::lit(TIME_SCALE) * t * w;
            out[2 * k] = angle.sin();
            out[2 * k + 1] = angle.cos();
        }
    }

    pub fn embed<T: Real>(&self, t: T) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim];
        self.embed_into(t, &mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounded_and_distinct() {
        let e = TimeEmbedding::new(4).unwrap();
        let ts: Vec<f64> = (1..=1000).map(|i| i as f64 / 1000.0).collect();
        let embs: Vec<Vec<f64>> = ts.iter().map(|&t| e.embed(t)).collect();
        for v in &embs {
            assert!(v.iter().all(|x| x.abs() <= 1.0));
        }
        for w in embs.windows(2) {
            let d: f64 = w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).powi(2)).sum();
            assert!(d > 0.0);
        }
        // Slowest pair is monotone in angle, hence injective over the horizon.
        let slow: Vec<f64> = embs.iter().map(|v| v[2].atan2(v[3])).collect();
        assert!(slow.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn rejects_odd_dims() {
        assert!(TimeEmbedding::new(3).is_err());
        assert!(TimeEmbedding::new(0).is_err());
    }
}
