use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::data::{EncodedModalities, MissingPattern, Modality, MultimodalSample};
use super::encoder::{encode, positional_encoding, ModalityEncoder};
use super::gcn::{normalize_adjacency, Gcn};
use super::graph::{build_graph, sequence_graph, similarity_adjacency, Node, GRAPH_RULE_VERSION};
use super::head::{squared_error, Prediction, PredictionHead};
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::linalg::{eigh, DenseMatrix, SpectralDecomposition, SymmetricMatrix};
use crate::nn::{
    dsm_loss_batch, Activation, AdamConfig, AdamState, Mlp, Preconditioning, ScoreNet, ScoreNetConfig,
};
use crate::sde::{forward_sample, prior_sample, run_reverse_chain, DiffusionSchedule, SdeStepPlan, T_EPS};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Raw feature dims of text, audio, visual.
    pub dims: [usize; 3],
    /// Shared encoding width.
    pub d: usize,
    pub kernels: [usize; 3],
    pub window: usize,
    pub score_hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub decoder_hidden: Vec<usize>,
    pub gcn_layers: usize,
    pub gcn_hidden: usize,
    /// Weight of the missing-modality losses in the total.
    pub beta: f64,
    /// Reverse steps in the training-time reconstruction branch.
    pub k_rec: usize,
    pub feature_schedule: DiffusionSchedule<f64>,
    pub spectrum_schedule: DiffusionSchedule<f64>,
    /// Parameterize the score nets as `net / std(t)` plus a unit-Gaussian
    /// skip term (see [`Preconditioning`]).
    pub precondition_scores: bool,
    pub adam: AdamConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dims: [12, 8, 10],
            d: 32,
            kernels: [3, 3, 3],
            window: super::graph::DEFAULT_WINDOW,
            score_hidden: vec![128, 128],
            time_embed_dim: 16,
            decoder_hidden: vec![64],
            gcn_layers: 2,
            gcn_hidden: 32,
            beta: 0.1,
            k_rec: 5,
            feature_schedule: DiffusionSchedule::default(),
            spectrum_schedule: DiffusionSchedule::default(),
            precondition_scores: true,
            adam: AdamConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dims.contains(&0) || self.d == 0 || self.kernels.contains(&0) {
            return Err(Error::Config("model dims and kernels must be positive".into()));
        }
        if self.gcn_layers == 0 || self.gcn_hidden == 0 || self.k_rec == 0 {
            return Err(Error::Config("gcn_layers, gcn_hidden and k_rec must be positive".into()));
        }
        if !(self.beta >= 0.0) || !self.beta.is_finite() {
            return Err(Error::Config(format!("beta must be a finite non-negative number, got {}", self.beta)));
        }
        if self.time_embed_dim == 0 || self.time_embed_dim % 2 != 0 {
            return Err(Error::Config("time_embed_dim must be even and positive".into()));
        }
        self.feature_schedule.validate()?;
        self.spectrum_schedule.validate()
    }
}

/// Trainable parameter groups, each with its own Adam state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Encoder(Modality),
    FeatureScore(Modality),
    SpectrumScore(Modality),
    FeatureDecoder(Modality),
    SpectrumDecoder(Modality),
    Gcn,
    Head,
}

impl Block {
    pub fn all() -> Vec<Block> {
        let mut out = Vec::with_capacity(17);
        for make in [
            Block::Encoder as fn(Modality) -> Block,
            Block::FeatureScore,
            Block::SpectrumScore,
            Block::FeatureDecoder,
            Block::SpectrumDecoder,
        ] {
            out.extend(Modality::ALL.map(make));
        }
        out.push(Block::Gcn);
        out.push(Block::Head);
        out
    }

    pub fn name(self) -> String {
        match self {
            Block::Encoder(m) => format!("encoder.{}", m.code()),
            Block::FeatureScore(m) => format!("score_x.{}", m.code()),
            Block::SpectrumScore(m) => format!("score_lambda.{}", m.code()),
            Block::FeatureDecoder(m) => format!("decoder_x.{}", m.code()),
            Block::SpectrumDecoder(m) => format!("decoder_lambda.{}", m.code()),
            Block::Gcn => "gcn".into(),
            Block::Head => "head".into(),
        }
    }
}

/// Losses of one training step (batch means).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StepLosses {
    pub score_x: f64,
    pub score_lambda: f64,
    pub rec: f64,
    pub pred: f64,
    pub total: f64,
}

impl StepLosses {
    /// `beta (rec + score_x + score_lambda) + pred`.
    pub fn compose(beta: f64, score_x: f64, score_lambda: f64, rec: f64, pred: f64) -> Self {
        let total = beta * (rec + score_x + score_lambda) + pred;
        Self { score_x, score_lambda, rec, pred, total }
    }

    fn is_finite(&self) -> bool {
        [self.score_x, self.score_lambda, self.rec, self.pred, self.total].iter().all(|v| v.is_finite())
    }
}

/// Test hooks for a training step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepOverrides {
    /// Diffusion time instead of a `U(t_eps, 1)` draw.
    pub time: Option<f64>,
    /// Replace every Gaussian draw with zero.
    pub zero_noise: bool,
}

/// Parameter gradients, one vector per [`Block::all`] entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

#[derive(Debug, Clone, PartialEq)]
pub struct Recovery {
    /// Observed encodings plus the recovered blocks of missing modalities.
    pub encoded: EncodedModalities,
    /// Raw-space reconstructions of the missing modalities.
    pub decoded: [Option<DenseMatrix<f64>>; 3],
    /// Recovered eigenvalues of each missing modality's graph together with
    /// the basis they were reassembled with.
    pub spectra: [Option<SpectralDecomposition<f64>>; 3],
    /// Full adjacency over all nodes with recovered blocks substituted.
    pub adjacency: SymmetricMatrix<f64>,
}

fn normals<R: Rng + ?Sized>(rng: &mut R, n: usize, zero: bool) -> Vec<f64> {
    if zero {
        return vec![0.0; n];
    }
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// Relative position of eigenvalue rank `i` among `n`.
#[inline]
fn rank_position(i: usize, n: usize) -> f64 {
    if n > 1 {
        i as f64 / (n - 1) as f64
    } else {
        0.5
    }
}

fn column(v: &[f64]) -> DenseMatrix<f64> {
    DenseMatrix::from_vec(v.len(), 1, v.to_vec()).expect("column shape")
}

/// Condition for the eigenvalue stream: mean observed eigenvalue at each
/// rank, and the rank position.
fn spectrum_condition(observed: &[&[f64]]) -> DenseMatrix<f64> {
    let n = observed[0].len();
    let inv = 1.0 / observed.len() as f64;
    DenseMatrix::from_fn(n, 2, |i, j| {
        if j == 0 {
            observed.iter().map(|l| l[i]).sum::<f64>() * inv
        } else {
            rank_position(i, n)
        }
    })
}

fn decoder_input_lambda(lambda: &[f64]) -> DenseMatrix<f64> {
    let n = lambda.len();
    DenseMatrix::from_fn(n, 2, |i, j| if j == 0 { lambda[i] } else { rank_position(i, n) })
}

fn sub_position(x: &DenseMatrix<f64>) -> DenseMatrix<f64> {
    let pe = positional_encoding(x.rows(), x.cols());
    let data = x.as_slice().iter().zip(pe.as_slice()).map(|(a, b)| a - b).collect();
    DenseMatrix::from_vec(x.rows(), x.cols(), data).expect("same shape")
}

fn block_spectrum(x: &DenseMatrix<f64>, window: usize) -> Result<Vec<f64>> {
    Ok(eigh(&sequence_graph(x, window)?)?.eigvals)
}

/// Stacks all three modality blocks and builds the similarity adjacency;
/// blocks listed in `spectra` are replaced by `U diag(lambda) U^T` with `U`
/// from the re-decomposed similarity block.
fn assemble_adjacency(
    blocks: [&DenseMatrix<f64>; 3],
    window: usize,
    spectra: &[(Modality, &[f64])],
) -> Result<(DenseMatrix<f64>, SymmetricMatrix<f64>, Vec<(Modality, SpectralDecomposition<f64>)>)> {
    let (n, d) = blocks[0].shape();
    let mut nodes: Vec<Node> = Vec::with_capacity(3 * n);
    let mut data = Vec::with_capacity(3 * n * d);
    for m in Modality::ALL {
        nodes.extend((0..n).map(|u| (m, u)));
        data.extend_from_slice(blocks[m.index()].as_slice());
    }
    let features = DenseMatrix::from_vec(3 * n, d, data)?;
    let (adj, _) = similarity_adjacency(&features, &nodes, window)?;
    let mut a = adj.into_matrix();
    let mut used = Vec::with_capacity(spectra.len());
    for &(m, lambda) in spectra {
        let off = m.index() * n;
        let block = SymmetricMatrix::new(DenseMatrix::from_fn(n, n, |i, j| a[(off + i, off + j)]))?;
        let basis = eigh(&block)?;
        let rebuilt = basis.reconstruct_with(lambda)?;
        for i in 0..n {
            for j in 0..n {
                a[(off + i, off + j)] = rebuilt.get(i, j);
            }
        }
        used.push((m, SpectralDecomposition { eigvals: lambda.to_vec(), eigvecs: basis.eigvecs }));
    }
    Ok((features, SymmetricMatrix::new(a)?, used))
}

/// Graph spectral diffusion network: encoders, per-modality conditional
/// score nets for the feature and eigenvalue streams, reconstruction
/// decoders, GCN fusion and a regression head.
#[derive(Debug, Clone, PartialEq)]
pub struct GsdnetModel {
    config: ModelConfig,
    pub encoders: [ModalityEncoder; 3],
    pub feature_scores: [ScoreNet<f64>; 3],
    pub spectrum_scores: [ScoreNet<f64>; 3],
    pub feature_decoders: [Mlp<f64>; 3],
    pub spectrum_decoders: [Mlp<f64>; 3],
    pub gcn: Gcn,
    pub head: PredictionHead,
    optimizers: Vec<AdamState<f64>>,
    steps: u64,
}

impl GsdnetModel {
    pub fn new<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let mut encoders = Vec::with_capacity(3);
        for m in Modality::ALL {
            encoders.push(ModalityEncoder::new(config.dims[m.index()], d, config.kernels[m.index()], rng)?);
        }
        let score_cfg = |state, cond, schedule: DiffusionSchedule<f64>| ScoreNetConfig {
            state_dim: state,
            cond_dim: cond,
            time_embed_dim: config.time_embed_dim,
            hidden: config.score_hidden.clone(),
            activation: Activation::Tanh,
            preconditioning: config.precondition_scores.then_some(Preconditioning { schedule, gaussian_skip: true }),
        };
        let mut feature_scores = Vec::with_capacity(3);
        let mut spectrum_scores = Vec::with_capacity(3);
        let mut feature_decoders = Vec::with_capacity(3);
        let mut spectrum_decoders = Vec::with_capacity(3);
        for m in Modality::ALL {
            feature_scores.push(ScoreNet::new(score_cfg(d, d, config.feature_schedule), rng)?);
            spectrum_scores.push(ScoreNet::new(score_cfg(1, 2, config.spectrum_schedule), rng)?);
            feature_decoders.push(Mlp::new(d, &config.decoder_hidden, config.dims[m.index()], Activation::Tanh, false, rng));
            spectrum_decoders.push(Mlp::new(2, &config.decoder_hidden, 1, Activation::Tanh, false, rng));
        }
        let gcn = Gcn::new(d, config.gcn_hidden, config.gcn_layers, rng)?;
        let head = PredictionHead::random(config.gcn_hidden, rng);
        let mut model = Self {
            encoders: arr(encoders),
            feature_scores: arr(feature_scores),
            spectrum_scores: arr(spectrum_scores),
            feature_decoders: arr(feature_decoders),
            spectrum_decoders: arr(spectrum_decoders),
            gcn,
            head,
            optimizers: Vec::new(),
            steps: 0,
            config,
        };
        model.reset_optimizers();
        Ok(model)
    }

    fn reset_optimizers(&mut self) {
        self.optimizers = Block::all()
            .into_iter()
            .map(|b| AdamState::new(self.block_params(b).len(), self.config.adam))
            .collect();
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    /// Changes the loss weight; the architecture is unaffected.
    pub fn set_beta(&mut self, beta: f64) -> Result<()> {
        if !(beta >= 0.0) || !beta.is_finite() {
            return Err(Error::Config(format!("beta must be a finite non-negative number, got {beta}")));
        }
        self.config.beta = beta;
        Ok(())
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.adam.lr = lr;
        for o in &mut self.optimizers {
            o.config.lr = lr;
        }
    }

    /// Completed optimizer steps.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn num_params(&self) -> usize {
        Block::all().into_iter().map(|b| self.block_params(b).len()).sum()
    }

    pub fn block_params(&self, b: Block) -> Vec<f64> {
        match b {
            Block::Encoder(m) => self.encoders[m.index()].params(),
            Block::FeatureScore(m) => self.feature_scores[m.index()].params(),
            Block::SpectrumScore(m) => self.spectrum_scores[m.index()].params(),
            Block::FeatureDecoder(m) => self.feature_decoders[m.index()].params(),
            Block::SpectrumDecoder(m) => self.spectrum_decoders[m.index()].params(),
            Block::Gcn => self.gcn.params(),
            Block::Head => self.head.params(),
        }
    }

    pub fn set_block_params(&mut self, b: Block, p: &[f64]) -> Result<()> {
        match b {
            Block::Encoder(m) => self.encoders[m.index()].set_params(p),
            Block::FeatureScore(m) => self.feature_scores[m.index()].set_params(p),
            Block::SpectrumScore(m) => self.spectrum_scores[m.index()].set_params(p),
            Block::FeatureDecoder(m) => self.feature_decoders[m.index()].set_params(p),
            Block::SpectrumDecoder(m) => self.spectrum_decoders[m.index()].set_params(p),
            Block::Gcn => self.gcn.set_params(p),
            Block::Head => self.head.set_params(p),
        }
    }

    fn check_sample(&self, sample: &MultimodalSample) -> Result<()> {
        if sample.dims() != self.config.dims {
            return Err(Error::Shape(format!(
                "sample dims {:?} do not match model dims {:?}",
                sample.dims(),
                self.config.dims
            )));
        }
        Ok(())
    }

    /// Losses and gradients averaged over `items`; the model is not updated.
    pub fn losses_and_gradients<R: Rng + ?Sized>(
        &mut self,
        items: &[(&MultimodalSample, MissingPattern)],
        rng: &mut R,
        overrides: StepOverrides,
    ) -> Result<(StepLosses, Gradients)> {
        if items.is_empty() {
            return Err(Error::Empty("training batch".into()));
        }
        let blocks = Block::all();
        let mut acc: Vec<Vec<f64>> = blocks.iter().map(|&b| vec![0.0; self.block_params(b).len()]).collect();
        let mut sums = [0.0; 4];
        for (sample, pattern) in items {
            let (parts, grads) = self.item_pass(sample, *pattern, rng, overrides)?;
            for (s, p) in sums.iter_mut().zip(parts) {
                *s += p;
            }
            for (a, g) in acc.iter_mut().zip(grads) {
                for (x, y) in a.iter_mut().zip(g) {
                    *x += y;
                }
            }
        }
        let inv = 1.0 / items.len() as f64;
        for a in &mut acc {
            for x in a.iter_mut() {
                *x *= inv;
            }
        }
        let losses = StepLosses::compose(self.config.beta, sums[0] * inv, sums[1] * inv, sums[2] * inv, sums[3] * inv);
        if !losses.is_finite() || acc.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { step: self.steps + 1, detail: format!("{losses:?}") });
        }
        Ok((losses, Gradients(acc)))
    }

    pub fn apply_gradients(&mut self, grads: &Gradients) -> Result<()> {
        let blocks = Block::all();
        if grads.0.len() != blocks.len() {
            return Err(Error::Shape("gradient block count".into()));
        }
        for (i, b) in blocks.into_iter().enumerate() {
            let mut p = self.block_params(b);
            self.optimizers[i].step(&mut p, &grads.0[i])?;
            self.set_block_params(b, &p)?;
        }
        self.steps += 1;
        Ok(())
    }

    /// One Adam step on the batch mean of the losses.
    pub fn train_batch<R: Rng + ?Sized>(
        &mut self,
        items: &[(&MultimodalSample, MissingPattern)],
        rng: &mut R,
        overrides: StepOverrides,
    ) -> Result<StepLosses> {
        let (losses, grads) = self.losses_and_gradients(items, rng, overrides)?;
        self.apply_gradients(&grads)?;
        Ok(losses)
    }

    pub fn train_step<R: Rng + ?Sized>(
        &mut self,
        sample: &MultimodalSample,
        pattern: MissingPattern,
        rng: &mut R,
    ) -> Result<StepLosses> {
        self.train_batch(&[(sample, pattern)], rng, StepOverrides::default())
    }

    /// One sample: returns `[score_x, score_lambda, rec, pred]` and gradients
    /// of `beta (score_x + score_lambda + rec) + pred`.
    fn item_pass<R: Rng + ?Sized>(
        &mut self,
        sample: &MultimodalSample,
        pattern: MissingPattern,
        rng: &mut R,
        ov: StepOverrides,
    ) -> Result<([f64; 4], Vec<Vec<f64>>)> {
        self.check_sample(sample)?;
        let beta = self.config.beta;
        let window = self.config.window;
        let (n, d) = (sample.utterances(), self.config.d);
        let observed = pattern.observed();
        let missing = pattern.missing();
        let blocks = Block::all();
        let slot = |b: Block| blocks.iter().position(|&x| x == b).expect("known block");
        let mut grads: Vec<Vec<f64>> = blocks.iter().map(|&b| vec![0.0; self.block_params(b).len()]).collect();

        // Observed modalities carry gradients from the prediction loss;
        // missing ones are encoded only as (detached) diffusion targets.
        let mut encoded: Vec<DenseMatrix<f64>> = Vec::with_capacity(3);
        for m in Modality::ALL {
            let x = sample.get(m);
            encoded.push(if pattern.is_available(m) {
                self.encoders[m.index()].forward(x)?
            } else {
                self.encoders[m.index()].encode(x)?
            });
        }
        let spectra: Vec<Vec<f64>> = encoded.iter().map(|x| block_spectrum(x, window)).collect::<Result<_>>()?;

        // DSM draws one time per row; the reconstruction chain starts from a
        // single shared time.
        let draw_time = |rng: &mut R| match ov.time {
            Some(t) => t,
            None => rng.random_range(T_EPS..1.0),
        };
        let t = draw_time(rng);
        let chain_plan = SdeStepPlan::new(self.config.k_rec)?;
        let (mut l_sx, mut l_sl, mut l_rec) = (0.0, 0.0, 0.0);
        let mut fused = encoded.clone();
        let mut substitutions: Vec<(Modality, Vec<f64>)> = Vec::new();

        if !missing.is_empty() {
            let cond_x = EncodedModalities {
                blocks: [0, 1, 2].map(|i| pattern.available()[i].then(|| encoded[i].clone())),
            }
            .mean_of(&observed)?;
            let obs_spectra: Vec<&[f64]> = observed.iter().map(|m| spectra[m.index()].as_slice()).collect();
            let cond_l = spectrum_condition(&obs_spectra);

            for &m in &missing {
                let i = m.index();
                let fs = self.config.feature_schedule;
                let ls = self.config.spectrum_schedule;

                // Denoising score matching on both streams.
                let times: Vec<f64> = (0..n).map(|_| draw_time(rng)).collect();
                let zx = DenseMatrix::from_vec(n, d, normals(rng, n * d, ov.zero_noise))?;
                let out = dsm_loss_batch(&mut self.feature_scores[i], &fs, &encoded[i], &cond_x, &times, &zx)?;
                l_sx += out.loss;
                add_scaled(&mut grads[slot(Block::FeatureScore(m))], &out.grads, beta);

                let lambda0 = column(&spectra[i]);
                let times: Vec<f64> = (0..n).map(|_| draw_time(rng)).collect();
                let zl = column(&normals(rng, n, ov.zero_noise));
                let out = dsm_loss_batch(&mut self.spectrum_scores[i], &ls, &lambda0, &cond_l, &times, &zl)?;
                l_sl += out.loss;
                add_scaled(&mut grads[slot(Block::SpectrumScore(m))], &out.grads, beta);

                // Short reverse chains from the perturbed states.
                let zx = normals(rng, n * d, ov.zero_noise);
                let xt = forward_sample(&fs, encoded[i].as_slice(), t, &zx)?;
                let net = &self.feature_scores[i];
                let x_rec = run_reverse_chain(
                    &fs,
                    &chain_plan,
                    xt,
                    t,
                    T_EPS,
                    |x, s| Ok(net.infer(&DenseMatrix::from_vec(n, d, x.to_vec())?, &cond_x, &vec![s; n])?.into_vec()),
                    |len| normals(rng, len, ov.zero_noise),
                )?;
                let x_rec = DenseMatrix::from_vec(n, d, x_rec)?;

                let lt = forward_sample(&ls, &spectra[i], t, &normals(rng, n, ov.zero_noise))?;
                let net = &self.spectrum_scores[i];
                let l_chain = run_reverse_chain(
                    &ls,
                    &chain_plan,
                    lt,
                    t,
                    T_EPS,
                    |x, s| Ok(net.infer(&column(x), &cond_l, &vec![s; n])?.into_vec()),
                    |len| normals(rng, len, ov.zero_noise),
                )?;

                // Reconstruction: raw features and eigenvalues.
                let dec = &mut self.feature_decoders[i];
                let x_hat = dec.forward(&sub_position(&x_rec))?;
                let target = sample.get(m);
                let mut g = DenseMatrix::zeros(n, target.cols());
                for (k, (a, b)) in x_hat.as_slice().iter().zip(target.as_slice()).enumerate() {
                    l_rec += (a - b) * (a - b);
                    g.as_mut_slice()[k] = 2.0 * (a - b);
                }
                let (dg, _) = dec.backward(&g)?;
                add_scaled(&mut grads[slot(Block::FeatureDecoder(m))], &dg, beta);

                let dec = &mut self.spectrum_decoders[i];
                let l_hat = dec.forward(&decoder_input_lambda(&l_chain))?;
                let mut g = DenseMatrix::zeros(n, 1);
                for (k, (a, b)) in l_hat.as_slice().iter().zip(&spectra[i]).enumerate() {
                    l_rec += (a - b) * (a - b);
                    g.as_mut_slice()[k] = 2.0 * (a - b);
                }
                let (dg, _) = dec.backward(&g)?;
                add_scaled(&mut grads[slot(Block::SpectrumDecoder(m))], &dg, beta);

                fused[i] = x_rec;
                substitutions.push((m, l_hat.into_vec()));
            }
        }

        // Fusion and prediction.
        let subs: Vec<(Modality, &[f64])> = substitutions.iter().map(|(m, l)| (*m, l.as_slice())).collect();
        let (features, adjacency, _) = assemble_adjacency([&fused[0], &fused[1], &fused[2]], window, &subs)?;
        let adj = normalize_adjacency(&adjacency);
        let out = self.gcn.forward(&features, &adj)?;
        let y = self.head.score(&out.pooled)?;
        let l_pred = squared_error(y, sample.label);
        let dy = 2.0 * (y - sample.label);
        let (dh, dpooled) = self.head.backward(&out.pooled, dy);
        add_scaled(&mut grads[slot(Block::Head)], &dh, 1.0);
        let (dgcn, dfeat) = self.gcn.backward(&dpooled)?;
        add_scaled(&mut grads[slot(Block::Gcn)], &dgcn, 1.0);
        for &m in &observed {
            let off = m.index() * n;
            let g = DenseMatrix::from_fn(n, d, |r, c| dfeat[(off + r, c)]);
            let de = self.encoders[m.index()].backward(&g)?;
            add_scaled(&mut grads[slot(Block::Encoder(m))], &de, 1.0);
        }
        Ok(([l_sx, l_sl, l_rec, l_pred], grads))
    }

    /// Samples the missing modalities from the prior through `plan`, decodes
    /// them and reassembles the adjacency.
    pub fn recover<R: Rng + ?Sized>(
        &self,
        sample: &MultimodalSample,
        pattern: MissingPattern,
        plan: &SdeStepPlan,
        rng: &mut R,
    ) -> Result<Recovery> {
        self.check_sample(sample)?;
        plan.validate()?;
        let window = self.config.window;
        let encoded = encode(sample, &pattern, &self.encoders)?;
        let missing = pattern.missing();
        if missing.is_empty() {
            let adjacency = build_graph(&encoded, window)?.adjacency;
            return Ok(Recovery { encoded, decoded: [None, None, None], spectra: [None, None, None], adjacency });
        }
        if self.steps == 0 {
            return Err(Error::Untrained);
        }
        let (n, d) = (sample.utterances(), self.config.d);
        let observed = pattern.observed();
        let cond_x = encoded.mean_of(&observed)?;
        let obs_spectra: Vec<Vec<f64>> = observed
            .iter()
            .map(|&m| block_spectrum(encoded.get(m).expect("observed"), window))
            .collect::<Result<_>>()?;
        let cond_l = spectrum_condition(&obs_spectra.iter().map(Vec::as_slice).collect::<Vec<_>>());

        let mut blocks = encoded.blocks.clone();
        let mut decoded: [Option<DenseMatrix<f64>>; 3] = [None, None, None];
        let mut lambdas: Vec<(Modality, Vec<f64>)> = Vec::new();
        for &m in &missing {
            let i = m.index();
            let fs = self.config.feature_schedule;
            let ls = self.config.spectrum_schedule;
            let x0 = prior_sample(&fs, n * d, &normals(rng, n * d, false))?;
            let net = &self.feature_scores[i];
            let x = run_reverse_chain(
                &fs,
                plan,
                x0,
                1.0,
                T_EPS,
                |x, s| Ok(net.infer(&DenseMatrix::from_vec(n, d, x.to_vec())?, &cond_x, &vec![s; n])?.into_vec()),
                |len| normals(rng, len, false),
            )?;
            let x = DenseMatrix::from_vec(n, d, x)?;

            let l0 = prior_sample(&ls, n, &normals(rng, n, false))?;
            let net = &self.spectrum_scores[i];
            let l = run_reverse_chain(
                &ls,
                plan,
                l0,
                1.0,
                T_EPS,
                |x, s| Ok(net.infer(&column(x), &cond_l, &vec![s; n])?.into_vec()),
                |len| normals(rng, len, false),
            )?;

            decoded[i] = Some(self.feature_decoders[i].infer(&sub_position(&x))?);
            let l_hat = self.spectrum_decoders[i].infer(&decoder_input_lambda(&l))?.into_vec();
            lambdas.push((m, l_hat));
            blocks[i] = Some(x);
        }
        let full: Vec<&DenseMatrix<f64>> = blocks.iter().map(|b| b.as_ref().expect("filled")).collect();
        let subs: Vec<(Modality, &[f64])> = lambdas.iter().map(|(m, l)| (*m, l.as_slice())).collect();
        let (_, adjacency, used) = assemble_adjacency([full[0], full[1], full[2]], window, &subs)?;
        let mut spectra: [Option<SpectralDecomposition<f64>>; 3] = [None, None, None];
        for (m, s) in used {
            spectra[m.index()] = Some(s);
        }
        Ok(Recovery { encoded: EncodedModalities { blocks }, decoded, spectra, adjacency })
    }

    /// Fuses node features over `adjacency` and applies the head.
    fn fuse_and_predict(&self, encoded: &EncodedModalities, adjacency: &SymmetricMatrix<f64>) -> Result<Prediction> {
        let present = encoded.present();
        let (n, d) = encoded.shape().ok_or_else(|| Error::Empty("nothing to fuse".into()))?;
        let mut data = Vec::with_capacity(present.len() * n * d);
        for &m in &present {
            data.extend_from_slice(encoded.get(m).expect("present").as_slice());
        }
        let features = DenseMatrix::from_vec(present.len() * n, d, data)?;
        let out = self.gcn.infer(&features, &normalize_adjacency(adjacency))?;
        self.head.predict(&out.pooled)
    }

    pub fn predict_recovered(&self, recovery: &Recovery) -> Result<Prediction> {
        self.fuse_and_predict(&recovery.encoded, &recovery.adjacency)
    }

    /// Prediction with every modality treated as observed.
    pub fn predict_complete(&self, sample: &MultimodalSample) -> Result<Prediction> {
        self.check_sample(sample)?;
        let encoded = encode(sample, &MissingPattern::complete(), &self.encoders)?;
        let graph = build_graph(&encoded, self.config.window)?;
        self.fuse_and_predict(&encoded, &graph.adjacency)
    }

    /// Serializes configuration, parameters, optimizer moments and step
    /// count. `extra` is merged into the manifest.
    pub fn to_container(&self, extra: serde_json::Value) -> Result<Container> {
        let blocks = Block::all();
        let mut manifest = json!({
            "kind": "gsdnet-model",
            "format_version": MODEL_FORMAT_VERSION,
            "graph_rule_version": GRAPH_RULE_VERSION,
            "config": self.config,
            "steps": self.steps,
            "blocks": blocks.iter().map(|b| b.name()).collect::<Vec<_>>(),
            "adam_steps": self.optimizers.iter().map(|o| o.step).collect::<Vec<_>>(),
        });
        if let (Some(obj), serde_json::Value::Object(more)) = (manifest.as_object_mut(), extra) {
            obj.extend(more);
        }
        let mut c = Container::new(manifest);
        for (b, opt) in blocks.iter().zip(&self.optimizers) {
            let p = self.block_params(*b);
            c.push(format!("params.{}", b.name()), vec![p.len()], p)?;
            c.push(format!("adam_m.{}", b.name()), vec![opt.m.len()], opt.m.clone())?;
            c.push(format!("adam_v.{}", b.name()), vec![opt.v.len()], opt.v.clone())?;
        }
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let m = &c.manifest;
        if m.get("kind").and_then(|k| k.as_str()) != Some("gsdnet-model") {
            return Err(Error::Format("container is not a model checkpoint".into()));
        }
        let version = m.get("format_version").and_then(|v| v.as_u64());
        if version != Some(MODEL_FORMAT_VERSION as u64) {
            return Err(Error::Format(format!("unsupported model format version {version:?}")));
        }
        if m.get("graph_rule_version").and_then(|v| v.as_u64()) != Some(GRAPH_RULE_VERSION as u64) {
            return Err(Error::Format("checkpoint was built with a different graph rule".into()));
        }
        let config: ModelConfig = serde_json::from_value(m["config"].clone())?;
        let steps: u64 = serde_json::from_value(m["steps"].clone())?;
        let adam_steps: Vec<u64> = serde_json::from_value(m["adam_steps"].clone())?;
        // Architecture comes from the config; every parameter is overwritten.
        let mut model = Self::new(config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let blocks = Block::all();
        if adam_steps.len() != blocks.len() {
            return Err(Error::Format("optimizer state count".into()));
        }
        for (i, b) in blocks.into_iter().enumerate() {
            model.set_block_params(b, &c.get(&format!("params.{}", b.name()))?.data)?;
            let opt = &mut model.optimizers[i];
            let mv = c.get(&format!("adam_m.{}", b.name()))?;
            let vv = c.get(&format!("adam_v.{}", b.name()))?;
            if mv.data.len() != opt.m.len() || vv.data.len() != opt.v.len() {
                return Err(Error::Format(format!("optimizer state size for {}", b.name())));
            }
            opt.m.copy_from_slice(&mv.data);
            opt.v.copy_from_slice(&vv.data);
            opt.step = adam_steps[i];
        }
        model.steps = steps;
        Ok(model)
    }
}

fn arr<X>(v: Vec<X>) -> [X; 3] {
    v.try_into().unwrap_or_else(|_| unreachable!("one entry per modality"))
}

fn add_scaled(acc: &mut [f64], g: &[f64], scale: f64) {
    for (a, b) in acc.iter_mut().zip(g) {
        *a += scale * b;
    }
}

/// Uniform draw over the seven availability sets.
pub fn random_training_pattern<R: Rng + ?Sized>(rng: &mut R) -> MissingPattern {
    let all = MissingPattern::all_fixed();
    all[rng.random_range(0..all.len())]
}
