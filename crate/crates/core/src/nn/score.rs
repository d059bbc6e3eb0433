use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::embed::TimeEmbedding;
use super::mlp::{Activation, Linear, Mlp};
use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Real;
use crate::sde::DiffusionSchedule;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreNetConfig {
    pub state_dim: usize,
    pub cond_dim: usize,
    pub time_embed_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    #[serde(default)]
    pub preconditioning: Option<Preconditioning>,
}

/// Output parameterization `s = net / std(t) - skip(t) x`. With the skip
/// enabled, `skip(t) = 1 / (mean_scale(t)^2 + std(t)^2)`, which makes an
/// untrained net return the exact score of unit-variance Gaussian data; the
/// network then only learns the residual.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Preconditioning {
    pub schedule: DiffusionSchedule<f64>,
    pub gaussian_skip: bool,
}

impl ScoreNetConfig {
    pub fn new(state_dim: usize, cond_dim: usize) -> Self {
        Self {
            state_dim,
            cond_dim,
            time_embed_dim: 16,
            hidden: vec![128, 128],
            activation: Activation::Tanh,
            preconditioning: None,
        }
    }
}

/// Score estimator `s(x, c, t)`: an MLP over `[x | c | embed(t)]` whose
/// output has the shape of `x`. The output layer starts at zero, so an
/// untrained net predicts a zero score.
#[derive(Debug, Clone)]
pub struct ScoreNet<T> {
    config: ScoreNetConfig,
    embed: TimeEmbedding,
    mlp: Mlp<T>,
    scales: Vec<(T, T)>,
}

// The cached scales are scratch state from the last forward pass.
impl<T: PartialEq> PartialEq for ScoreNet<T> {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.embed == other.embed && self.mlp == other.mlp
    }
}

impl<T: Real> ScoreNet<T> {
    pub fn new<R: Rng + ?Sized>(config: ScoreNetConfig, rng: &mut R) -> Result<Self> {
        if config.state_dim == 0 {
            return Err(Error::Shape("score net state_dim must be positive".into()));
        }
        let embed = TimeEmbedding::new(config.time_embed_dim)?;
        let input = config.state_dim + config.cond_dim + config.time_embed_dim;
        let mlp = Mlp::new(input, &config.hidden, config.state_dim, config.activation, true, rng);
        Ok(Self { config, embed, mlp, scales: Vec::new() })
    }

    pub fn config(&self) -> &ScoreNetConfig {
        &self.config
    }

    pub fn mlp(&self) -> &Mlp<T> {
        &self.mlp
    }

    pub fn mlp_mut(&mut self) -> &mut Mlp<T> {
        &mut self.mlp
    }

    pub fn num_params(&self) -> usize {
        self.mlp.num_params()
    }

    pub fn params(&self) -> Vec<T> {
        self.mlp.params()
    }

    pub fn set_params(&mut self, flat: &[T]) -> Result<()> {
        self.mlp.set_params(flat)
    }

    fn assemble(&self, state: &DenseMatrix<T>, cond: &DenseMatrix<T>, times: &[T]) -> Result<DenseMatrix<T>> {
        let rows = state.rows();
        let (sd, cd, ed) = (self.config.state_dim, self.config.cond_dim, self.config.time_embed_dim);
        if state.cols() != sd || cond.cols() != cd || cond.rows() != rows || times.len() != rows {
            return Err(Error::Shape(format!(
                "score net expects state {rows}x{sd}, cond {rows}x{cd}, {rows} times; got {:?}, {:?}, {}",
                state.shape(),
                cond.shape(),
                times.len()
            )));
        }
        let mut x = DenseMatrix::zeros(rows, sd + cd + ed);
        for i in 0..rows {
            let r = x.row_mut(i);
            r[..sd].copy_from_slice(state.row(i));
            r[sd..sd + cd].copy_from_slice(cond.row(i));
            self.embed.embed_into(times[i], &mut r[sd + cd..]);
        }
        Ok(x)
    }

    /// Per-row `(output multiplier, skip coefficient)`, or `None` for a
    /// plain net.
    fn row_scales(&self, times: &[T]) -> Result<Option<Vec<(T, T)>>> {
        let Some(pre) = &self.config.preconditioning else { return Ok(None) };
        times
            .iter()
            .map(|&t| {
                let t = t.to_f64_lossy();
                let k = pre.schedule.kernel(t);
                if k.std > 0.0 {
                    let skip = if pre.gaussian_skip { 1.0 / (k.mean_scale * k.mean_scale + k.std * k.std) } else { 0.0 };
                    Ok((T::lit(1.0 / k.std), T::lit(skip)))
                } else {
                    Err(Error::DegenerateKernel(t))
                }
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn precondition(out: &mut DenseMatrix<T>, state: &DenseMatrix<T>, scales: &[(T, T)]) {
        for (i, &(k, skip)) in scales.iter().enumerate() {
            for (v, &x) in out.row_mut(i).iter_mut().zip(state.row(i)) {
                *v = k * *v - skip * x;
            }
        }
    }

    /// Batched inference, one time per row.
    pub fn infer(&self, state: &DenseMatrix<T>, cond: &DenseMatrix<T>, times: &[T]) -> Result<DenseMatrix<T>> {
        let mut out = self.mlp.infer(&self.assemble(state, cond, times)?)?;
        if let Some(scales) = self.row_scales(times)? {
            Self::precondition(&mut out, state, &scales);
        }
        Ok(out)
    }

    /// Single-vector score.
    pub fn score(&self, state: &[T], cond: &[T], t: T) -> Result<Vec<T>> {
        let s = DenseMatrix::from_vec(1, state.len(), state.to_vec())?;
        let c = DenseMatrix::from_vec(1, cond.len(), cond.to_vec())?;
        Ok(self.infer(&s, &c, &[t])?.into_vec())
    }

    /// Batched training pass; records activations for [`ScoreNet::backward`].
    pub fn forward(&mut self, state: &DenseMatrix<T>, cond: &DenseMatrix<T>, times: &[T]) -> Result<DenseMatrix<T>> {
        let x = self.assemble(state, cond, times)?;
        let mut out = self.mlp.forward(&x)?;
        self.scales = match self.row_scales(times)? {
            Some(scales) => {
                Self::precondition(&mut out, state, &scales);
                scales
            }
            None => Vec::new(),
        };
        Ok(out)
    }

    /// Returns `(parameter gradients, state gradient, cond gradient)`.
    pub fn backward(&mut self, grad_out: &DenseMatrix<T>) -> Result<(Vec<T>, DenseMatrix<T>, DenseMatrix<T>)> {
        let (grads, dx) = if self.scales.is_empty() {
            self.mlp.backward(grad_out)?
        } else {
            let mut g = grad_out.clone();
            for (i, &(k, _)) in self.scales.iter().enumerate() {
                for v in g.row_mut(i) {
                    *v *= k;
                }
            }
            self.mlp.backward(&g)?
        };
        let (sd, cd) = (self.config.state_dim, self.config.cond_dim);
        let rows = dx.rows();
        let skip = |i: usize| self.scales.get(i).map_or(T::zero(), |s| s.1);
        let ds = DenseMatrix::from_fn(rows, sd, |i, j| dx[(i, j)] - skip(i) * grad_out[(i, j)]);
        let dc = DenseMatrix::from_fn(rows, cd, |i, j| dx[(i, sd + j)]);
        Ok((grads, ds, dc))
    }

    /// Serializes layer shapes, flat parameters and the schedule the net was
    /// trained against.
    pub fn to_container(&self, schedule: &DiffusionSchedule<T>) -> Result<Container>
    where
        T: Serialize,
    {
        let mut c = Container::new(json!({
            "kind": "score-net",
            "config": self.config,
            "layers": self.mlp.shapes(),
            "schedule": schedule,
        }));
        let params: Vec<f64> = self.params().iter().map(|x| x.to_f64_lossy()).collect();
        c.push("params", vec![params.len()], params)?;
        Ok(c)
    }

    pub fn from_container(c: &Container) -> Result<(Self, DiffusionSchedule<T>)>
    where
        T: for<'de> Deserialize<'de>,
    {
        if c.manifest.get("kind").and_then(|k| k.as_str()) != Some("score-net") {
            return Err(Error::Format("container is not a score-net checkpoint".into()));
        }
        let config: ScoreNetConfig = serde_json::from_value(c.manifest["config"].clone())?;
        let schedule: DiffusionSchedule<T> = serde_json::from_value(c.manifest["schedule"].clone())?;
        let shapes: Vec<(usize, usize)> = serde_json::from_value(c.manifest["layers"].clone())?;
        let layers = shapes.iter().map(|&(i, o)| Linear::zeros(i, o)).collect();
        let mlp = Mlp::from_layers(layers, config.activation)?;
        let mut net = Self { embed: TimeEmbedding::new(config.time_embed_dim)?, config, mlp, scales: Vec::new() };
        let params: Vec<T> = c.get("params")?.data.iter().map(|&x| T::lit(x)).collect();
        net.set_params(&params)?;
        Ok((net, schedule))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn untrained_net_predicts_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for dim in [4, 16, 64] {
            let net = ScoreNet::<f64>::new(ScoreNetConfig::new(dim, 3), &mut rng).unwrap();
            let out = net.score(&vec![0.7; dim], &[1.0, -1.0, 0.5], 0.3).unwrap();
            assert_eq!(out.len(), dim);
            assert!(out.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let net = ScoreNet::<f64>::new(ScoreNetConfig::new(4, 2), &mut rng).unwrap();
        assert!(net.score(&[0.0; 3], &[0.0; 2], 0.5).is_err());
        assert!(net.score(&[0.0; 4], &[0.0; 1], 0.5).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut net = ScoreNet::<f64>::new(ScoreNetConfig::new(3, 2), &mut rng).unwrap();
        let p: Vec<f64> = (0..net.num_params()).map(|i| (i as f64 * 0.37).sin()).collect();
        net.set_params(&p).unwrap();
        let schedule = DiffusionSchedule::vp(0.1, 20.0).unwrap();
        let mut buf = Vec::new();
        net.to_container(&schedule).unwrap().write(&mut buf).unwrap();
        let (back, sched) = ScoreNet::<f64>::from_container(&Container::read(&buf[..]).unwrap()).unwrap();
        assert_eq!(sched, schedule);
        assert_eq!(back, net);
        let x = [0.1, 0.2, 0.3];
        assert_eq!(back.score(&x, &[1.0, 2.0], 0.4).unwrap(), net.score(&x, &[1.0, 2.0], 0.4).unwrap());
    }
}
