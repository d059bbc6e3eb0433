use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{random_training_pattern, GsdnetModel, MissingPattern, MultimodalSample, StepLosses, StepOverrides};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Total optimizer steps; a resumed run continues up to this count.
    pub steps: u64,
    pub batch_size: usize,
    /// Checkpoint interval in steps; the final step is always saved.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { steps: 3000, batch_size: 8, checkpoint_every: 500 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("train.checkpoint_every must be positive".into()));
        }
        Ok(())
    }
}

/// Samples drawn with replacement, each paired with a uniformly drawn
/// availability pattern.
pub fn draw_batch<'a, R: Rng + ?Sized>(
    train: &'a [MultimodalSample],
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<(&'a MultimodalSample, MissingPattern)>> {
    if train.is_empty() {
        return Err(Error::Empty("training split".into()));
    }
    Ok((0..batch_size)
        .map(|_| {
            let s = &train[rng.random_range(0..train.len())];
            (s, random_training_pattern(rng))
        })
        .collect())
}

/// One optimizer step on a freshly drawn batch.
pub fn train_one_step<R: Rng + ?Sized>(
    model: &mut GsdnetModel,
    train: &[MultimodalSample],
    batch_size: usize,
    rng: &mut R,
) -> Result<StepLosses> {
    let batch = draw_batch(train, batch_size, rng)?;
    model.train_batch(&batch, rng, StepOverrides::default())
}

/// Trains until `model.steps() == config.steps`, calling `on_step` after
/// every update.
pub fn train<R, F>(
    model: &mut GsdnetModel,
    train: &[MultimodalSample],
    config: &TrainConfig,
    rng: &mut R,
    mut on_step: F,
) -> Result<()>
where
    R: Rng + ?Sized,
    F: FnMut(&GsdnetModel, &StepLosses) -> Result<()>,
{
    config.validate()?;
    while model.steps() < config.steps {
        let losses = train_one_step(model, train, config.batch_size, rng)?;
        on_step(model, &losses)?;
    }
    Ok(())
}
