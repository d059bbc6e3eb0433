use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::derive_seed;
use super::metrics::classification_metrics;
use super::missing::MaskedSample;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::{GsdnetModel, Modality, MultimodalSample};
use crate::sde::SdeStepPlan;

pub const REPORT_VERSION: u32 = 1;
pub const AVERAGE_LABEL: &str = "Average";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    /// Diffusion recovery of missing modalities.
    Recovery,
    /// Missing raw features replaced by training-split means.
    MeanImputation,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Recovery => "recovery",
            Self::MeanImputation => "mean-imputation",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: Method,
    /// Pattern id such as `{t,v}`, `rate=0.3`, or `Average`.
    pub setting: String,
    pub seed: u64,
    pub samples: usize,
    pub acc2: f64,
    pub f1: f64,
    pub acc7: f64,
    /// Mean squared error over every missing raw entry; zero when nothing
    /// was missing.
    pub recovery_mse: f64,
    pub missing_entries: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub version: u32,
    pub config_hash: String,
    pub rows: Vec<EvalRow>,
}

/// Per-feature means of each modality over all utterances of `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalityMeans(pub [Vec<f64>; 3]);

impl ModalityMeans {
    pub fn fit(train: &[MultimodalSample]) -> Result<Self> {
        let first = train.first().ok_or_else(|| Error::Empty("training split".into()))?;
        let dims = first.dims();
        let mut sums = dims.map(|d| vec![0.0; d]);
        let mut count = 0usize;
        for s in train {
            if s.dims() != dims {
                return Err(Error::Shape("training samples disagree on dims".into()));
            }
            for m in Modality::ALL {
                let x = s.get(m);
                for u in 0..x.rows() {
                    for (acc, v) in sums[m.index()].iter_mut().zip(x.row(u)) {
                        *acc += v;
                    }
                }
            }
            count += s.utterances();
        }
        let inv = 1.0 / count as f64;
        Ok(Self(sums.map(|v| v.into_iter().map(|x| x * inv).collect())))
    }

    /// Copy of `sample` with the given modalities replaced by the means.
    pub fn impute(&self, sample: &MultimodalSample, missing: &[Modality]) -> Result<MultimodalSample> {
        let mut out = sample.clone();
        for &m in missing {
            let mean = &self.0[m.index()];
            out.modalities[m.index()] = DenseMatrix::from_fn(sample.utterances(), mean.len(), |_, j| mean[j]);
        }
        Ok(out)
    }
}

struct SampleOutcome {
    prediction: f64,
    label: f64,
    sq_error: f64,
    entries: usize,
}

fn squared_error_sum(a: &DenseMatrix<f64>, b: &DenseMatrix<f64>) -> f64 {
    a.as_slice().iter().zip(b.as_slice()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn summarize(method: Method, setting: String, seed: u64, outcomes: Vec<SampleOutcome>) -> Result<EvalRow> {
    let preds: Vec<f64> = outcomes.iter().map(|o| o.prediction).collect();
    let labels: Vec<f64> = outcomes.iter().map(|o| o.label).collect();
    let m = classification_metrics(&preds, &labels)?;
    let entries: usize = outcomes.iter().map(|o| o.entries).sum();
    let sq: f64 = outcomes.iter().map(|o| o.sq_error).sum();
    Ok(EvalRow {
        method,
        setting,
        seed,
        samples: outcomes.len(),
        acc2: m.acc2,
        f1: m.f1,
        acc7: m.acc7,
        recovery_mse: if entries == 0 { 0.0 } else { sq / entries as f64 },
        missing_entries: entries,
    })
}

/// Recovers and predicts every sample. Each sample draws from its own
/// generator seeded by `(seed, sample id)`, so results do not depend on
/// scheduling and the same sample sees the same noise under every pattern.
pub fn evaluate(
    model: &GsdnetModel,
    masked: &[MaskedSample],
    plan: &SdeStepPlan,
    setting: &str,
    seed: u64,
) -> Result<EvalRow> {
    if masked.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let outcomes = masked
        .par_iter()
        .map(|ms| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[ms.sample.id]));
            let rec = model.recover(&ms.sample, ms.pattern, plan, &mut rng)?;
            let prediction = model.predict_recovered(&rec)?.score;
            let (mut sq_error, mut entries) = (0.0, 0);
            for m in ms.pattern.missing() {
                let x = rec.decoded[m.index()].as_ref().expect("missing modality is decoded");
                sq_error += squared_error_sum(x, ms.sample.get(m));
                entries += x.as_slice().len();
            }
            Ok(SampleOutcome { prediction, label: ms.sample.label, sq_error, entries })
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(Method::Recovery, setting.to_string(), seed, outcomes)
}

/// Baseline: missing modalities replaced by training means, then a
/// complete-case forward pass.
pub fn evaluate_mean_imputation(
    model: &GsdnetModel,
    masked: &[MaskedSample],
    means: &ModalityMeans,
    setting: &str,
    seed: u64,
) -> Result<EvalRow> {
    if masked.is_empty() {
        return Err(Error::Empty("evaluation set".into()));
    }
    let outcomes = masked
        .par_iter()
        .map(|ms| {
            let missing = ms.pattern.missing();
            let imputed = means.impute(&ms.sample, &missing)?;
            let prediction = model.predict_complete(&imputed)?.score;
            let (mut sq_error, mut entries) = (0.0, 0);
            for m in missing {
                sq_error += squared_error_sum(imputed.get(m), ms.sample.get(m));
                entries += imputed.get(m).as_slice().len();
            }
            Ok(SampleOutcome { prediction, label: ms.sample.label, sq_error, entries })
        })
        .collect::<Result<Vec<_>>>()?;
    summarize(Method::MeanImputation, setting.to_string(), seed, outcomes)
}

impl EvalReport {
    pub fn new(config_hash: impl Into<String>, rows: Vec<EvalRow>) -> Self {
        Self { version: REPORT_VERSION, config_hash: config_hash.into(), rows }
    }

    /// Appends one `Average` row per method: the arithmetic mean of that
    /// method's rows. Sample and entry counts are summed.
    pub fn with_average(mut self) -> Self {
        for method in [Method::Recovery, Method::MeanImputation] {
            let rows: Vec<&EvalRow> =
                self.rows.iter().filter(|r| r.method == method && r.setting != AVERAGE_LABEL).collect();
            if rows.is_empty() {
                continue;
            }
            let k = rows.len() as f64;
            let mean = |f: fn(&EvalRow) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / k;
            let avg = EvalRow {
                method,
                setting: AVERAGE_LABEL.into(),
                seed: rows[0].seed,
                samples: rows.iter().map(|r| r.samples).sum(),
                acc2: mean(|r| r.acc2),
                f1: mean(|r| r.f1),
                acc7: mean(|r| r.acc7),
                recovery_mse: mean(|r| r.recovery_mse),
                missing_entries: rows.iter().map(|r| r.missing_entries).sum(),
            };
            self.rows.push(avg);
        }
        self
    }

    pub fn find(&self, method: Method, setting: &str) -> Option<&EvalRow> {
        self.rows.iter().find(|r| r.method == method && r.setting == setting)
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "#version={},config_hash={}", self.version, self.config_hash)?;
        writeln!(w, "method,setting,seed,samples,acc2,f1,acc7,recovery_mse,missing_entries")?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{}",
                r.method.as_str(),
                csv_field(&r.setting),
                r.seed,
                r.samples,
                r.acc2,
                r.f1,
                r.acc7,
                r.recovery_mse,
                r.missing_entries
            )?;
        }
        Ok(())
    }

    pub fn save(&self, csv_path: &Path, json_path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(csv_path, buf)?;
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        std::fs::write(json_path, json)?;
        Ok(())
    }
}

/// Quotes fields containing commas (pattern ids do).
pub fn csv_field(s: &str) -> String {
    if s.contains([',', '"']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}
