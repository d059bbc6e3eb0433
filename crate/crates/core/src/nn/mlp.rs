use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, x: T) -> T {
        match self {
            Self::Tanh => x.tanh(),
            Self::Relu => x.max(T::zero()),
            Self::Identity => x,
        }
    }

    /// Derivative expressed through the activation output `y = act(x)`.
    #[inline]
    fn grad_from_output<T: Real>(self, y: T) -> T {
        match self {
            Self::Tanh => T::one() - y * y,
            Self::Relu => {
                if y > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Self::Identity => T::one(),
        }
    }
}

/// Affine map `x W + b`, `W` stored `in x out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    pub weight: DenseMatrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Linear<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: DenseMatrix::zeros(input, output), bias: vec![T::zero(); output] }
    }

    /// Gaussian init with std `sqrt(1 / fan_in)`, zero bias.
    pub fn random<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, (1.0 / input.max(1) as f64).sqrt()).expect("positive std");
        let weight = DenseMatrix::from_fn(input, output, |_, _| T::lit(normal.sample(rng)));
        Self { weight, bias: vec![T::zero(); output] }
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.weight.rows()
    }

    #[inline]
    pub fn output_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn num_params(&self) -> usize {
        self.weight.as_slice().len() + self.bias.len()
    }

    pub fn forward(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        let mut z = x.matmul(&self.weight)?;
        for i in 0..z.rows() {
            for (v, &b) in z.row_mut(i).iter_mut().zip(&self.bias) {
                *v += b;
            }
        }
        Ok(z)
    }
}

/// Activations recorded by a training-mode forward pass.
#[derive(Debug, Clone)]
struct Tape<T> {
    /// Input of every layer; `inputs[0]` is the network input.
    inputs: Vec<DenseMatrix<T>>,
}

/// Fully connected network: `hidden_activation` after every layer except the
/// last, which stays linear.
#[derive(Debug, Clone)]
pub struct Mlp<T> {
    pub layers: Vec<Linear<T>>,
    pub activation: Activation,
    tape: Option<Tape<T>>,
}

impl<T: PartialEq> PartialEq for Mlp<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.activation == other.activation
    }
}

impl<T: Real> Mlp<T> {
    /// Random hidden layers; the output layer is zero when `zero_last` is set.
    pub fn new<R: Rng + ?Sized>(
        input: usize,
        hidden: &[usize],
        output: usize,
        activation: Activation,
        zero_last: bool,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![input];
        dims.extend_from_slice(hidden);
        dims.push(output);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                if l == n - 1 && zero_last {
                    Linear::zeros(dims[l], dims[l + 1])
                } else {
                    Linear::random(dims[l], dims[l + 1], rng)
                }
            })
            .collect();
        Self { layers, activation, tape: None }
    }

    pub fn from_layers(layers: Vec<Linear<T>>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::Shape("consecutive layer dims disagree".into()));
            }
        }
        Ok(Self { layers, activation, tape: None })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Linear::num_params).sum()
    }

    /// Layer shapes `(in, out)`, used by checkpoints.
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.input_dim(), l.output_dim())).collect()
    }

    /// Parameters flattened layer by layer: weight (row-major) then bias.
    pub fn params(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(l.weight.as_slice());
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[T]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                flat.len()
            )));
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weight.as_slice().len();
            l.weight.as_mut_slice().copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }

    fn check_input(&self, x: &DenseMatrix<T>) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "network expects {} inputs, got {}",
                self.input_dim(),
                x.cols()
            )));
        }
        Ok(())
    }

    fn run(&self, x: &DenseMatrix<T>, mut record: Option<&mut Vec<DenseMatrix<T>>>) -> Result<DenseMatrix<T>> {
        self.check_input(x)?;
        let last = self.layers.len() - 1;
        let mut h = x.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut z = layer.forward(&h)?;
            if l != last {
                let act = self.activation;
                z = z.map(|v| act.apply(v));
            }
            if let Some(rec) = record.as_deref_mut() {
                rec.push(std::mem::replace(&mut h, z));
            } else {
                h = z;
            }
        }
        Ok(h)
    }

    /// Inference pass; nothing is recorded.
    pub fn infer(&self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        self.run(x, None)
    }

    /// Training pass; records the activations needed by [`Mlp::backward`].
    pub fn forward(&mut self, x: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let out = self.run(x, Some(&mut inputs))?;
        self.tape = Some(Tape { inputs });
        Ok(out)
    }

    /// Consumes the recorded pass and returns `(parameter gradients in
    /// [`Mlp::params`] order, input gradient)`.
    pub fn backward(&mut self, grad_out: &DenseMatrix<T>) -> Result<(Vec<T>, DenseMatrix<T>)> {
        let tape = self.tape.take().ok_or(Error::NoForward)?;
        let rows = tape.inputs[0].rows();
        if grad_out.shape() != (rows, self.output_dim()) {
            return Err(Error::Shape(format!(
                "upstream gradient {:?} vs output {:?}",
                grad_out.shape(),
                (rows, self.output_dim())
            )));
        }
        let mut per_layer: Vec<Vec<T>> = vec![Vec::new(); self.layers.len()];
        let mut g = grad_out.clone();
        for l in (0..self.layers.len()).rev() {
            let input = &tape.inputs[l];
            let layer = &self.layers[l];
            let dw = input.t_matmul(&g)?;
            let mut db = vec![T::zero(); layer.output_dim()];
            for i in 0..g.rows() {
                for (acc, &v) in db.iter_mut().zip(g.row(i)) {
                    *acc += v;
                }
            }
            let mut flat = dw.into_vec();
            flat.extend(db);
            per_layer[l] = flat;

            let mut dx = g.matmul(&layer.weight.transpose())?;
            if l > 0 {
                // `input` is the activated output of layer l - 1.
                let act = self.activation;
                for (d, &y) in dx.as_mut_slice().iter_mut().zip(input.as_slice()) {
                    *d *= act.grad_from_output(y);
                }
            }
            g = dx;
        }
        Ok((per_layer.concat(), g))
    }

    pub fn has_tape(&self) -> bool {
        self.tape.is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn backward_requires_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = Mlp::<f64>::new(3, &[4], 2, Activation::Tanh, false, &mut rng);
        let g = DenseMatrix::zeros(1, 2);
        assert!(matches!(net.backward(&g), Err(Error::NoForward)));
        net.forward(&DenseMatrix::zeros(1, 3)).unwrap();
        assert!(net.backward(&g).is_ok());
        assert!(matches!(net.backward(&g), Err(Error::NoForward)));
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = Mlp::<f64>::new(3, &[5, 4], 2, Activation::Tanh, false, &mut rng);
        let x = DenseMatrix::from_fn(4, 3, |i, j| (i + j) as f64 * 0.1);
        net.forward(&x).unwrap();
        let (grads, dx) = net.backward(&DenseMatrix::zeros(4, 2)).unwrap();
        assert!(grads.iter().all(|&g| g == 0.0));
        assert!(dx.as_slice().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_network_gradient_is_outer_product() {
        // y = x W + b with loss L = sum(y * c): dW = x^T c, db = sum_rows(c), dx = c W^T.
        let w = DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![0.5, 3.0], vec![-1.0, 0.25]]).unwrap();
        let layer = Linear { weight: w.clone(), bias: vec![0.1, -0.2] };
        let mut net = Mlp::from_layers(vec![layer], Activation::Identity).unwrap();
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 2.0]]).unwrap();
        let c = DenseMatrix::from_rows(&[vec![0.5, -1.0], vec![2.0, 1.0]]).unwrap();
        net.forward(&x).unwrap();
        let (grads, dx) = net.backward(&c).unwrap();
        let mut expect = Vec::new();
        for i in 0..3 {
            for j in 0..2 {
                expect.push(x[(0, i)] * c[(0, j)] + x[(1, i)] * c[(1, j)]);
            }
        }
        expect.extend([0.5 + 2.0, -1.0 + 1.0]);
        assert_eq!(grads, expect);
        for r in 0..2 {
            for i in 0..3 {
                let want = c[(r, 0)] * w[(i, 0)] + c[(r, 1)] * w[(i, 1)];
                assert_eq!(dx[(r, i)], want);
            }
        }
    }

    #[test]
    fn params_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::<f64>::new(2, &[3], 1, Activation::Relu, false, &mut rng);
        let mut other = Mlp::<f64>::new(2, &[3], 1, Activation::Relu, true, &mut rng);
        other.set_params(&net.params()).unwrap();
        assert_eq!(other, net);
        assert!(other.set_params(&[0.0; 3]).is_err());
    }
}
