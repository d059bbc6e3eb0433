use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{eigh, DenseMatrix, SymmetricMatrix};
use crate::model::{MultimodalSample, LABEL_RANGE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub num_samples: usize,
    /// Inclusive range of utterances per conversation.
    pub utterances: [usize; 2],
    /// Raw dims of text, audio, visual.
    pub dims: [usize; 3],
    pub latent_dim: usize,
    /// Noise added to the audio and visual maps of the text features.
    pub eta: f64,
    pub label_noise: f64,
    /// Lag-one correlation of the latent sequence.
    pub latent_correlation: f64,
    /// Standard deviation of the noiseless label.
    pub label_scale: f64,
    /// Train / validation / test fractions.
    pub splits: [f64; 3],
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            num_samples: 400,
            utterances: [6, 10],
            dims: [12, 8, 10],
            latent_dim: 12,
            eta: 0.1,
            label_noise: 0.1,
            latent_correlation: 0.7,
            label_scale: 1.2,
            splits: [0.7, 0.15, 0.15],
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let [a, b, c] = self.splits;
        if self.splits.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) || ((a + b + c) - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split ratios {:?} must be non-negative and sum to 1", self.splits)));
        }
        if self.num_samples == 0 {
            return Err(Error::Config("num_samples must be positive".into()));
        }
        if self.utterances[0] == 0 || self.utterances[0] > self.utterances[1] {
            return Err(Error::Config(format!("invalid utterance range {:?}", self.utterances)));
        }
        if self.dims.contains(&0) || self.latent_dim == 0 {
            return Err(Error::Config("dims and latent_dim must be positive".into()));
        }
        if self.latent_dim > self.dims[0] {
            return Err(Error::Config("latent_dim cannot exceed the text dim".into()));
        }
        if !(self.eta >= 0.0) || !(self.label_noise >= 0.0) || !(self.label_scale >= 0.0) {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        if !(self.latent_correlation.abs() < 1.0) {
            return Err(Error::Config("latent_correlation must lie in (-1, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub train: Vec<MultimodalSample>,
    pub val: Vec<MultimodalSample>,
    pub test: Vec<MultimodalSample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Latent sequence `z_u` (AR(1), unit stationary variance) drives the text
/// features `z_u M`; audio and visual are `text F + eta noise`; the label is
/// a linear readout of the utterance-mean latent plus noise.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticGenerator {
    pub config: SyntheticConfig,
    pub seed: u64,
    /// `latent_dim x d_text`.
    pub text_map: DenseMatrix<f64>,
    /// `d_text x d_audio`.
    pub audio_map: DenseMatrix<f64>,
    /// `d_text x d_visual`.
    pub visual_map: DenseMatrix<f64>,
    pub readout: Vec<f64>,
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DenseMatrix<f64> {
    let normal = Normal::new(0.0, (1.0 / rows as f64).sqrt()).expect("positive std");
    DenseMatrix::from_fn(rows, cols, |_, _| normal.sample(rng))
}

/// Rank of `m` from the eigenvalues of its Gram matrix.
pub fn numerical_rank(m: &DenseMatrix<f64>) -> Result<usize> {
    let gram = if m.rows() <= m.cols() { m.matmul(&m.transpose())? } else { m.t_matmul(m)? };
    let vals = eigh(&SymmetricMatrix::new(gram)?)?.eigvals;
    let top = vals.iter().fold(0.0f64, |a, &v| a.max(v));
    Ok(vals.iter().filter(|&&v| v > top * 1e-10).count())
}

impl SyntheticGenerator {
    pub fn new(config: SyntheticConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [dt, da, dv] = config.dims;
        let k = config.latent_dim;
        // Redraw until every map has full rank (almost surely the first try).
        loop {
            let text_map = gaussian_matrix(&mut rng, k, dt);
            let audio_map = gaussian_matrix(&mut rng, dt, da);
            let visual_map = gaussian_matrix(&mut rng, dt, dv);
            let mut readout: Vec<f64> = (0..k).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = readout.iter().map(|v| v * v).sum::<f64>().sqrt();
            for v in &mut readout {
                *v /= norm;
            }
            let full = |m: &DenseMatrix<f64>| numerical_rank(m).map(|r| r == m.rows().min(m.cols()));
            if full(&text_map)? && full(&audio_map)? && full(&visual_map)? {
                return Ok(Self { config, seed, text_map, audio_map, visual_map, readout });
            }
        }
    }

    /// Noiseless cross-modal maps applied to text features.
    pub fn audio_of(&self, text: &DenseMatrix<f64>) -> Result<DenseMatrix<f64>> {
        text.matmul(&self.audio_map)
    }

    pub fn visual_of(&self, text: &DenseMatrix<f64>) -> Result<DenseMatrix<f64>> {
        text.matmul(&self.visual_map)
    }

    /// Draws one sample; returns it with its noiseless label readout.
    fn sample(&self, id: u64, rng: &mut ChaCha8Rng) -> Result<(MultimodalSample, f64)> {
        let c = &self.config;
        let n = rng.random_range(c.utterances[0]..=c.utterances[1]);
        let k = c.latent_dim;
        let rho = c.latent_correlation;
        let innov = (1.0 - rho * rho).sqrt();
        let mut z = DenseMatrix::zeros(n, k);
        for u in 0..n {
            for j in 0..k {
                let e: f64 = StandardNormal.sample(rng);
                z[(u, j)] = if u == 0 { e } else { rho * z[(u - 1, j)] + innov * e };
            }
        }
        let text = z.matmul(&self.text_map)?;
        let mut audio = self.audio_of(&text)?;
        let mut visual = self.visual_of(&text)?;
        for v in audio.as_mut_slice().iter_mut().chain(visual.as_mut_slice().iter_mut()) {
            let e: f64 = StandardNormal.sample(rng);
            *v += c.eta * e;
        }
        // Normalize the readout so its standard deviation is label_scale
        // regardless of n and the latent correlation.
        let mean_var = mean_latent_variance(n, rho);
        let mut readout = 0.0;
        for j in 0..k {
            let zbar = (0..n).map(|u| z[(u, j)]).sum::<f64>() / n as f64;
            readout += self.readout[j] * zbar;
        }
        let clean = c.label_scale * readout / mean_var.sqrt();
        let e: f64 = StandardNormal.sample(rng);
        let label = (clean + c.label_noise * e).clamp(-LABEL_RANGE, LABEL_RANGE);
        Ok((MultimodalSample::new(id, [text, audio, visual], label)?, clean))
    }

    /// All samples in generation order with their noiseless readouts.
    pub fn samples_with_readout(&self) -> Result<Vec<(MultimodalSample, f64)>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed_da7a);
        (0..self.config.num_samples as u64).map(|id| self.sample(id, &mut rng)).collect()
    }

    /// Shuffles the samples and cuts them into train / val / test.
    pub fn generate(&self) -> Result<Dataset> {
        let mut samples: Vec<MultimodalSample> = self.samples_with_readout()?.into_iter().map(|(s, _)| s).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5b17_0000);
        for i in (1..samples.len()).rev() {
            samples.swap(i, rng.random_range(0..=i));
        }
        let total = samples.len();
        let n_train = (self.config.splits[0] * total as f64).round() as usize;
        let n_val = ((self.config.splits[1] * total as f64).round() as usize).min(total - n_train);
        let test = samples.split_off(n_train + n_val);
        let val = samples.split_off(n_train);
        Ok(Dataset { train: samples, val, test })
    }
}

/// Variance of the mean of `n` consecutive AR(1) values with unit marginal
/// variance and lag-one correlation `rho`.
pub fn mean_latent_variance(n: usize, rho: f64) -> f64 {
    let mut acc = n as f64;
    for lag in 1..n {
        acc += 2.0 * (n - lag) as f64 * rho.powi(lag as i32);
    }
    acc / (n * n) as f64
}

pub fn generate(config: &SyntheticConfig, seed: u64) -> Result<Dataset> {
    SyntheticGenerator::new(config.clone(), seed)?.generate()
}
