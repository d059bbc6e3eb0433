use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;
use specdiff::checkpoint::Container;
use specdiff::harness::{
    apply_missing, csv_field, derive_seed, diffusion_space_comparison, evaluate, evaluate_mean_imputation,
    mean_curve_value, read_dataset, train_one_step, windowed_graphs, write_curves_csv, write_dataset, Dataset,
    DatasetManifest, EvalReport, Metric, MissingMode, ModalityMeans, Space,
};
use specdiff::model::{Block, GsdnetModel, Modality};

use crate::{CliError, RunConfig};

pub const LOG_VERSION: u32 = 1;
pub const LOSS_HEADER: &str = "step,L_s_theta,L_s_phi,L_rec,L_pred,L_total";
pub const SNAPSHOT_FILE: &str = "resolved_config.toml";
pub const SNAPSHOT_HASH_FILE: &str = "resolved_config.sha256";

// Child-seed labels; every stream of randomness hangs off the run seed.
const DATA_SEED: u64 = 1;
const TRAIN_SEED: u64 = 2;
const EVAL_SEED: u64 = 3;
const MASK_SEED: u64 = 4;
const GRAPH_SEED: u64 = 5;
const NOISE_SEED: u64 = 6;

/// Generator position stored in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RngState {
    seed: String,
    stream: u64,
    /// `u128` as a decimal string (JSON numbers cannot hold it).
    word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: hex::encode(rng.get_seed()), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    fn restore(&self) -> Result<ChaCha8Rng, CliError> {
        let bad = || CliError::Io("checkpoint holds a malformed generator state".into());
        let seed: [u8; 32] = hex::decode(&self.seed).map_err(|_| bad())?.try_into().map_err(|_| bad())?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct RunState {
    config_hash: String,
    dataset_hash: String,
    rng: RngState,
}

/// Writes the resolved configuration and its hash into `dir`.
fn write_snapshot(dir: &Path, cfg: &RunConfig) -> Result<String, CliError> {
    fs::create_dir_all(dir)?;
    let text = cfg.snapshot()?;
    let hash = cfg.hash()?;
    fs::write(dir.join(SNAPSHOT_FILE), &text)?;
    fs::write(dir.join(SNAPSHOT_HASH_FILE), format!("{hash}\n"))?;
    Ok(hash)
}

fn load_dataset(cfg: &RunConfig) -> Result<(Dataset, DatasetManifest), CliError> {
    let dir = cfg.dataset_dir();
    read_dataset(&dir).map_err(|e| match e {
        specdiff::Error::Io(io) => CliError::Io(format!("cannot read dataset in {}: {io}", dir.display())),
        other => other.into(),
    })
}

fn load_checkpoint(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<(GsdnetModel, RunState), CliError> {
    let path = cfg.checkpoint_path();
    let c = Container::load(&path)
        .map_err(|e| CliError::Io(format!("cannot read checkpoint {}: {e}", path.display())))?;
    let state: RunState = serde_json::from_value(c.manifest["run"].clone())
        .map_err(|e| CliError::Io(format!("checkpoint {} has no run state: {e}", path.display())))?;
    if state.dataset_hash != manifest.dataset_hash {
        return Err(specdiff::Error::Mismatch(format!(
            "checkpoint was trained on dataset {}, found {}",
            state.dataset_hash, manifest.dataset_hash
        ))
        .into());
    }
    Ok((GsdnetModel::from_container(&c)?, state))
}

fn save_checkpoint(path: &Path, model: &GsdnetModel, state: &RunState) -> Result<(), CliError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut buf = Vec::new();
    model.to_container(json!({ "run": state }))?.write(&mut buf)?;
    // Write then rename so an interrupted save never clobbers the last
    // good checkpoint.
    let tmp = path.with_extension("sdck.tmp");
    fs::write(&tmp, buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn params_finite(model: &GsdnetModel) -> bool {
    Block::all().into_iter().all(|b| model.block_params(b).iter().all(|v| v.is_finite()))
}

pub fn generate(cfg: &RunConfig) -> Result<String, CliError> {
    let dir = cfg.dataset_dir();
    let seed = derive_seed(cfg.seed, &[DATA_SEED]);
    let dataset = specdiff::harness::generate(&cfg.data, seed)?;
    let manifest = write_dataset(&dir, &dataset, &cfg.data, seed)?;
    write_snapshot(&dir, cfg)?;
    Ok(format!(
        "wrote {} train / {} val / {} test samples to {}\ndataset hash {}",
        dataset.train.len(),
        dataset.val.len(),
        dataset.test.len(),
        dir.display(),
        manifest.dataset_hash
    ))
}

/// Keeps the header and the rows up to `step`; returns the file content.
fn truncate_log(path: &Path, step: u64) -> Result<String, CliError> {
    let fresh = format!("#version={LOG_VERSION}\n{LOSS_HEADER}\n");
    let Ok(text) = fs::read_to_string(path) else { return Ok(fresh) };
    let mut out = String::new();
    for line in text.lines() {
        let keep = match line.split(',').next().and_then(|s| s.parse::<u64>().ok()) {
            Some(s) => s <= step,
            None => true,
        };
        if keep {
            out.push_str(line);
            out.push('\n');
        }
    }
    if !out.starts_with('#') {
        return Ok(fresh);
    }
    Ok(out)
}

pub fn train(cfg: &RunConfig, resume: bool) -> Result<String, CliError> {
    let (dataset, manifest) = load_dataset(cfg)?;
    if manifest.generator.dims != cfg.model.dims {
        return Err(CliError::Config(format!(
            "model.dims {:?} does not match the dataset dims {:?}",
            cfg.model.dims, manifest.generator.dims
        )));
    }
    let dir = cfg.out.join("train");
    let config_hash = write_snapshot(&dir, cfg)?;
    let ckpt = cfg.checkpoint_path();
    let log_path = dir.join("loss.csv");

    let (mut model, mut rng) = if resume {
        let (model, state) = load_checkpoint(cfg, &manifest)?;
        if model.config() != &cfg.model {
            return Err(CliError::Config("checkpoint model settings differ from the [model] section".into()));
        }
        let rng = state.rng.restore()?;
        (model, rng)
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[TRAIN_SEED]));
        let model = GsdnetModel::new(cfg.model.clone(), &mut rng)?;
        (model, rng)
    };
    let start = model.steps();
    let log_text = if resume { truncate_log(&log_path, start)? } else { truncate_log(Path::new(""), 0)? };
    fs::write(&log_path, log_text)?;
    let mut log = OpenOptions::new().append(true).open(&log_path)?;

    let state = |rng: &ChaCha8Rng| RunState {
        config_hash: config_hash.clone(),
        dataset_hash: manifest.dataset_hash.clone(),
        rng: RngState::capture(rng),
    };
    let timer = Instant::now();
    let mut saved = false;
    while model.steps() < cfg.train.steps {
        let losses = match train_one_step(&mut model, &dataset.train, cfg.train.batch_size, &mut rng) {
            Ok(l) => l,
            Err(e) => {
                return Err(match CliError::from(e) {
                    CliError::Numeric(msg) => CliError::Numeric(format!(
                        "{msg} at step {}; last good checkpoint kept at {}",
                        model.steps() + 1,
                        ckpt.display()
                    )),
                    other => other,
                });
            }
        };
        let step = model.steps();
        writeln!(
            log,
            "{step},{},{},{},{},{}",
            losses.score_x, losses.score_lambda, losses.rec, losses.pred, losses.total
        )?;
        log.flush()?;
        saved = false;
        if step % cfg.train.checkpoint_every == 0 || step == cfg.train.steps {
            if !params_finite(&model) {
                return Err(CliError::Numeric(format!(
                    "parameters became non-finite at step {step}; last good checkpoint kept at {}",
                    ckpt.display()
                )));
            }
            save_checkpoint(&ckpt, &model, &state(&rng))?;
            saved = true;
        }
    }
    if !saved {
        save_checkpoint(&ckpt, &model, &state(&rng))?;
    }
    eprintln!("trained steps {start}..{} in {:.1}s", model.steps(), timer.elapsed().as_secs_f64());
    Ok(format!(
        "trained to step {} ({} new); checkpoint {}\nloss log {}",
        model.steps(),
        model.steps() - start,
        ckpt.display(),
        log_path.display()
    ))
}

fn report_table(name: &str, report: &EvalReport) -> String {
    let mut s = format!("{name}\n{:<16} {:<20} {:>7} {:>7} {:>7} {:>12}\n", "method", "setting", "acc2", "f1", "acc7", "mse");
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{:<16} {:<20} {:>7.4} {:>7.4} {:>7.4} {:>12.6}",
            r.method.as_str(),
            r.setting,
            r.acc2,
            r.f1,
            r.acc7,
            r.recovery_mse
        );
    }
    s
}

pub fn eval(cfg: &RunConfig) -> Result<String, CliError> {
    let (dataset, manifest) = load_dataset(cfg)?;
    let (model, _) = load_checkpoint(cfg, &manifest)?;
    let dir = cfg.out.join("eval");
    let hash = write_snapshot(&dir, cfg)?;
    let eval_seed = derive_seed(cfg.seed, &[EVAL_SEED]);
    let mask_seed = derive_seed(cfg.seed, &[MASK_SEED]);
    let means = if cfg.eval.mean_imputation { Some(ModalityMeans::fit(&dataset.train)?) } else { None };
    let timer = Instant::now();
    let groups: [(&str, Vec<MissingMode>); 2] = [
        ("patterns", cfg.eval.patterns.iter().map(|&p| MissingMode::FixedPattern(p)).collect()),
        ("rates", cfg.eval.rates.iter().map(|&r| MissingMode::RandomRate(r)).collect()),
    ];
    let mut summary = String::new();
    for (name, modes) in groups {
        if modes.is_empty() {
            continue;
        }
        let mut rows = Vec::new();
        for mode in modes {
            let masked = apply_missing(&dataset.test, mode, mask_seed)?;
            let label = mode.label();
            rows.push(evaluate(&model, &masked, &cfg.eval.plan, &label, eval_seed)?);
            if let Some(means) = &means {
                rows.push(evaluate_mean_imputation(&model, &masked, means, &label, eval_seed)?);
            }
        }
        let report = EvalReport::new(hash.clone(), rows).with_average();
        report.save(&dir.join(format!("{name}.csv")), &dir.join(format!("{name}.json")))?;
        summary.push_str(&report_table(name, &report));
    }
    eprintln!("evaluated in {:.1}s", timer.elapsed().as_secs_f64());
    let _ = write!(summary, "reports in {}", dir.display());
    Ok(summary)
}

pub fn compare(cfg: &RunConfig) -> Result<String, CliError> {
    let dir = cfg.out.join("compare");
    write_snapshot(&dir, cfg)?;
    let c = &cfg.compare;
    let graphs = windowed_graphs(c, derive_seed(cfg.seed, &[GRAPH_SEED]))?;
    let points = diffusion_space_comparison(&graphs, &c.schedule, &c.times, derive_seed(cfg.seed, &[NOISE_SEED]))?;
    let mut buf = Vec::new();
    write_curves_csv(&points, &mut buf)?;
    let path = dir.join("curves.csv");
    fs::write(&path, buf)?;
    let mut summary = format!("mean relative Frobenius distance over {} graphs\n{:>8} {:>12} {:>12}\n", graphs.len(), "t", "adjacency", "spectral");
    for &t in &c.times {
        let a = mean_curve_value(&points, Space::Adjacency, t, Metric::RelativeFrobenius).unwrap_or(f64::NAN);
        let s = mean_curve_value(&points, Space::Spectral, t, Metric::RelativeFrobenius).unwrap_or(f64::NAN);
        let _ = writeln!(summary, "{t:>8.3} {a:>12.6} {s:>12.6}");
    }
    let _ = write!(summary, "{} rows in {}", points.len(), path.display());
    Ok(summary)
}

pub fn recover(cfg: &RunConfig) -> Result<String, CliError> {
    let (dataset, manifest) = load_dataset(cfg)?;
    let (model, _) = load_checkpoint(cfg, &manifest)?;
    let dir = cfg.out.join("recover");
    write_snapshot(&dir, cfg)?;
    let pattern = cfg.recover.pattern;
    let limit = cfg.recover.limit.unwrap_or(dataset.test.len()).min(dataset.test.len());
    let samples = &dataset.test[..limit];
    let eval_seed = derive_seed(cfg.seed, &[EVAL_SEED]);
    let results = samples
        .par_iter()
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(eval_seed, &[s.id]));
            let rec = model.recover(s, pattern, &cfg.eval.plan, &mut rng)?;
            let pred = model.predict_recovered(&rec)?;
            Ok((rec, pred))
        })
        .collect::<specdiff::Result<Vec<_>>>()?;

    let mut per_sample = format!("#version={LOG_VERSION}\nsample_id,pattern,utterances,label,prediction,mse_t,mse_a,mse_v\n");
    let d = model.config().d;
    let mut embed = format!("#version={LOG_VERSION}\nsample_id,modality,origin,utterance");
    for j in 0..d {
        let _ = write!(embed, ",e{j}");
    }
    embed.push('\n');
    for (s, (rec, pred)) in samples.iter().zip(&results) {
        let mse: Vec<String> = Modality::ALL
            .iter()
            .map(|&m| match &rec.decoded[m.index()] {
                Some(x) => {
                    let truth = s.get(m).as_slice();
                    let sq: f64 = x.as_slice().iter().zip(truth).map(|(a, b)| (a - b) * (a - b)).sum();
                    (sq / truth.len() as f64).to_string()
                }
                None => String::new(),
            })
            .collect();
        let _ = writeln!(
            per_sample,
            "{},{},{},{},{},{}",
            s.id,
            csv_field(&pattern.to_string()),
            s.utterances(),
            s.label,
            pred.score,
            mse.join(",")
        );
        for m in Modality::ALL {
            let origin = if pattern.is_available(m) { "observed" } else { "recovered" };
            let x = rec.encoded.get(m).expect("recovery fills every modality");
            for u in 0..x.rows() {
                let _ = write!(embed, "{},{},{origin},{u}", s.id, m.code());
                for v in x.row(u) {
                    let _ = write!(embed, ",{v}");
                }
                embed.push('\n');
            }
        }
    }
    let ps: PathBuf = dir.join("per_sample.csv");
    fs::write(&ps, per_sample)?;
    fs::write(dir.join("embeddings.csv"), embed)?;
    Ok(format!("recovered {limit} samples with pattern {pattern}; outputs in {}", dir.display()))
}
