use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::error::{Error, Result};
use crate::model::{MissingPattern, MultimodalSample};

/// Largest random missing rate accepted.
pub const MAX_RATE: f64 = 0.7;

/// The rate grid `0.0, 0.1, ..., 0.7`.
pub fn rate_grid() -> Vec<f64> {
    (0..=7).map(|k| k as f64 / 10.0).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum MissingMode {
    FixedPattern(MissingPattern),
    RandomRate(f64),
}

impl MissingMode {
    /// Row label used in reports.
    pub fn label(&self) -> String {
        match self {
            Self::FixedPattern(p) => p.to_string(),
            Self::RandomRate(r) => format!("rate={r:.1}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedSample {
    pub sample: MultimodalSample,
    pub pattern: MissingPattern,
}

/// Uniform draws for the three cells of a sample; draw `k` is the `k`-th
/// re-roll. Shared by every rate so masks are nested across rates.
fn cell_uniforms(seed: u64, id: u64) -> impl FnMut() -> [f64; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[id, 0x6d61_736b]));
    move || [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()]
}

/// First Bernoulli draw for a sample's cells, before any re-roll: `true`
/// marks a masked cell.
pub fn raw_cell_mask(seed: u64, id: u64, rate: f64) -> [bool; 3] {
    cell_uniforms(seed, id)().map(|u| u < rate)
}

/// Pattern for one sample under a random rate: each cell is masked with
/// probability `rate`, redrawing while all three would be masked.
pub fn random_pattern(seed: u64, id: u64, rate: f64) -> Result<MissingPattern> {
    check_rate(rate)?;
    let mut draw = cell_uniforms(seed, id);
    loop {
        let available = draw().map(|u| u >= rate);
        if let Ok(p) = MissingPattern::new(available) {
            return Ok(p);
        }
    }
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..=MAX_RATE + 1e-12).contains(&rate) {
        return Err(Error::Config(format!("missing rate {rate} outside [0, {MAX_RATE}]")));
    }
    Ok(())
}

pub fn apply_missing(samples: &[MultimodalSample], mode: MissingMode, seed: u64) -> Result<Vec<MaskedSample>> {
    if let MissingMode::RandomRate(r) = mode {
        check_rate(r)?;
    }
    samples
        .iter()
        .map(|s| {
            let pattern = match mode {
                MissingMode::FixedPattern(p) => p,
                MissingMode::RandomRate(r) => random_pattern(seed, s.id, r)?,
            };
            Ok(MaskedSample { sample: s.clone(), pattern })
        })
        .collect()
}

/// Expected masked fraction per cell after re-rolling fully masked samples,
/// `p (1 + p) / (1 + p + p^2)` for three modalities.
pub fn expected_masked_fraction(rate: f64) -> f64 {
    rate * (1.0 + rate) / (1.0 + rate + rate * rate)
}
