//! Synthetic data, missing-modality protocols, evaluation and the
//! adjacency-space versus spectral-space noising experiment.

mod compare;
mod evaluate;
mod io;
mod metrics;
mod missing;
mod synth;
mod training;

use sha2::{Digest, Sha256};

pub use compare::{
    adjacency_noising, diffusion_space_comparison, edge_retention, mean_curve_value, spectral_noising,
    subspace_alignment, windowed_graphs, write_curves_csv, CompareConfig, CurvePoint, Metric, Space, CURVES_VERSION,
};
pub use evaluate::{
    csv_field, evaluate, evaluate_mean_imputation, EvalReport, EvalRow, Method, ModalityMeans, AVERAGE_LABEL,
    REPORT_VERSION,
};
pub use io::{read_dataset, write_dataset, DatasetManifest, DATASET_VERSION, MANIFEST_FILE, SPLITS};
pub use metrics::{classification_metrics, ClassificationMetrics};
pub use missing::{
    apply_missing, expected_masked_fraction, random_pattern, rate_grid, raw_cell_mask, MaskedSample, MissingMode,
    MAX_RATE,
};
pub use training::{draw_batch, train, train_one_step, TrainConfig};
pub use synth::{generate, mean_latent_variance, numerical_rank, Dataset, SyntheticConfig, SyntheticGenerator};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Child seed from a base seed and a path of integers.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut h = Sha256::new();
    h.update(base.to_le_bytes());
    for p in parts {
        h.update(p.to_le_bytes());
    }
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
