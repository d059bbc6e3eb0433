use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::sha256_hex;
use super::synth::{Dataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::model::MultimodalSample;

pub const DATASET_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MatrixRecord {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleRecord {
    id: u64,
    label: f64,
    text: MatrixRecord,
    audio: MatrixRecord,
    visual: MatrixRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SplitFile {
    version: u32,
    split: String,
    samples: Vec<SampleRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub generator: SyntheticConfig,
    /// Split file name to SHA-256 of its bytes.
    pub files: BTreeMap<String, String>,
    pub counts: BTreeMap<String, usize>,
    /// Hash over the per-file hashes; checkpoints record it.
    pub dataset_hash: String,
}

fn to_record(m: &DenseMatrix<f64>) -> MatrixRecord {
    MatrixRecord { rows: m.rows(), cols: m.cols(), data: m.as_slice().to_vec() }
}

fn from_record(r: MatrixRecord) -> Result<DenseMatrix<f64>> {
    DenseMatrix::from_vec(r.rows, r.cols, r.data)
}

fn split_bytes(name: &str, samples: &[MultimodalSample]) -> Result<Vec<u8>> {
    let file = SplitFile {
        version: DATASET_VERSION,
        split: name.to_string(),
        samples: samples
            .iter()
            .map(|s| SampleRecord {
                id: s.id,
                label: s.label,
                text: to_record(&s.modalities[0]),
                audio: to_record(&s.modalities[1]),
                visual: to_record(&s.modalities[2]),
            })
            .collect(),
    };
    let mut bytes = serde_json::to_vec(&file)?;
    bytes.push(b'\n');
    Ok(bytes)
}

fn parse_split(bytes: &[u8], name: &str) -> Result<Vec<MultimodalSample>> {
    let file: SplitFile = serde_json::from_slice(bytes)?;
    if file.version != DATASET_VERSION || file.split != name {
        return Err(Error::Format(format!("{name}: unexpected split file header")));
    }
    file.samples
        .into_iter()
        .map(|r| {
            MultimodalSample::new(r.id, [from_record(r.text)?, from_record(r.audio)?, from_record(r.visual)?], r.label)
        })
        .collect()
}

fn combined_hash(files: &BTreeMap<String, String>) -> String {
    let mut s = String::new();
    for name in SPLITS {
        let file = format!("{name}.json");
        s.push_str(&format!("{file}:{}\n", files.get(&file).map(String::as_str).unwrap_or("")));
    }
    sha256_hex(s.as_bytes())
}

/// Writes `train.json`, `val.json`, `test.json` and `manifest.json`.
pub fn write_dataset(dir: &Path, dataset: &Dataset, generator: &SyntheticConfig, seed: u64) -> Result<DatasetManifest> {
    std::fs::create_dir_all(dir)?;
    let mut files = BTreeMap::new();
    let mut counts = BTreeMap::new();
    for (name, samples) in SPLITS.iter().zip([&dataset.train, &dataset.val, &dataset.test]) {
        let bytes = split_bytes(name, samples)?;
        let file = format!("{name}.json");
        std::fs::write(dir.join(&file), &bytes)?;
        files.insert(file, sha256_hex(&bytes));
        counts.insert(name.to_string(), samples.len());
    }
    let dataset_hash = combined_hash(&files);
    let manifest = DatasetManifest { version: DATASET_VERSION, seed, generator: generator.clone(), files, counts, dataset_hash };
    let mut json = serde_json::to_vec_pretty(&manifest)?;
    json.push(b'\n');
    std::fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

/// Reads a dataset directory, checking every split file against the
/// manifest hashes.
pub fn read_dataset(dir: &Path) -> Result<(Dataset, DatasetManifest)> {
    let manifest: DatasetManifest = serde_json::from_slice(&std::fs::read(dir.join(MANIFEST_FILE))?)?;
    if manifest.version != DATASET_VERSION {
        return Err(Error::Format(format!("unsupported dataset version {}", manifest.version)));
    }
    let mut splits = Vec::with_capacity(3);
    for name in SPLITS {
        let file = format!("{name}.json");
        let bytes = std::fs::read(dir.join(&file))?;
        let want = manifest.files.get(&file).ok_or_else(|| Error::Format(format!("manifest lacks {file}")))?;
        if &sha256_hex(&bytes) != want {
            return Err(Error::Mismatch(format!("{file} does not match its manifest hash")));
        }
        splits.push(parse_split(&bytes, name)?);
    }
    if combined_hash(&manifest.files) != manifest.dataset_hash {
        return Err(Error::Mismatch("manifest dataset hash is inconsistent".into()));
    }
    let test = splits.pop().expect("three splits");
    let val = splits.pop().expect("three splits");
    let train = splits.pop().expect("three splits");
    Ok((Dataset { train, val, test }, manifest))
}
