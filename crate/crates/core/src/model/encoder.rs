use rand::Rng;

use super::data::{EncodedModalities, Modality, MultimodalSample, MissingPattern};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::nn::{Activation, Linear, Mlp};

/// Sinusoidal position table: column `2i` holds `sin(pos / 10000^(2i/d))`,
/// column `2i+1` the matching cosine.
pub fn positional_encoding(n: usize, d: usize) -> DenseMatrix<f64> {
    DenseMatrix::from_fn(n, d, |pos, j| {
        let two_i = (j / 2 * 2) as f64;
        let angle = pos as f64 / 10000f64.powf(two_i / d as f64);
        if j % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// 1-D convolution over the utterance axis with same padding, followed by
/// the positional table. The convolution is stored as one affine map over
/// the unfolded `kernel * d_in` window.
#[derive(Debug, Clone, PartialEq)]
pub struct ModalityEncoder {
    kernel: usize,
    input_dim: usize,
    conv: Mlp<f64>,
}

impl ModalityEncoder {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, d: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        if kernel == 0 || input_dim == 0 || d == 0 {
            return Err(Error::Config("encoder kernel and dims must be positive".into()));
        }
        let layer = Linear::random(kernel * input_dim, d, rng);
        Ok(Self { kernel, input_dim, conv: Mlp::from_layers(vec![layer], Activation::Identity)? })
    }

    /// Kernel size 1 with an identity weight, so the output is `x + PE`.
    pub fn identity(d: usize) -> Self {
        let layer = Linear { weight: DenseMatrix::identity(d), bias: vec![0.0; d] };
        let conv = Mlp::from_layers(vec![layer], Activation::Identity).expect("single layer");
        Self { kernel: 1, input_dim: d, conv }
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn output_dim(&self) -> usize {
        self.conv.output_dim()
    }

    pub fn num_params(&self) -> usize {
        self.conv.num_params()
    }

    pub fn params(&self) -> Vec<f64> {
        self.conv.params()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        self.conv.set_params(flat)
    }

    fn unfold(&self, x: &DenseMatrix<f64>) -> Result<DenseMatrix<f64>> {
        if x.rows() == 0 {
            return Err(Error::Empty("encoder input has no utterances".into()));
        }
        if x.cols() != self.input_dim {
            return Err(Error::Shape(format!("encoder expects dim {}, got {}", self.input_dim, x.cols())));
        }
        let (n, din, k) = (x.rows(), self.input_dim, self.kernel);
        let left = (k - 1) / 2;
        let mut out = DenseMatrix::zeros(n, k * din);
        for u in 0..n {
            let row = out.row_mut(u);
            for j in 0..k {
                let src = u + j;
                if src < left || src - left >= n {
                    continue;
                }
                row[j * din..(j + 1) * din].copy_from_slice(x.row(src - left));
            }
        }
        Ok(out)
    }

    fn add_position(y: &mut DenseMatrix<f64>) {
        let pe = positional_encoding(y.rows(), y.cols());
        for (v, p) in y.as_mut_slice().iter_mut().zip(pe.as_slice()) {
            *v += p;
        }
    }

    pub fn encode(&self, x: &DenseMatrix<f64>) -> Result<DenseMatrix<f64>> {
        let mut y = self.conv.infer(&self.unfold(x)?)?;
        Self::add_position(&mut y);
        Ok(y)
    }

    /// Training pass; pair with [`ModalityEncoder::backward`].
    pub fn forward(&mut self, x: &DenseMatrix<f64>) -> Result<DenseMatrix<f64>> {
        let u = self.unfold(x)?;
        let mut y = self.conv.forward(&u)?;
        Self::add_position(&mut y);
        Ok(y)
    }

    pub fn backward(&mut self, grad_out: &DenseMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self.conv.backward(grad_out)?.0)
    }
}

/// Encodes the modalities marked available; missing ones stay `None`.
pub fn encode(
    sample: &MultimodalSample,
    pattern: &MissingPattern,
    encoders: &[ModalityEncoder; 3],
) -> Result<EncodedModalities> {
    let mut blocks: [Option<DenseMatrix<f64>>; 3] = [None, None, None];
    for m in Modality::ALL {
        if pattern.is_available(m) {
            blocks[m.index()] = Some(encoders[m.index()].encode(sample.get(m))?);
        }
    }
    Ok(EncodedModalities { blocks })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradient;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn positional_table_values() {
        let pe = positional_encoding(2, 4);
        assert_eq!(pe[(0, 0)], 0.0);
        assert_eq!(pe[(0, 1)], 1.0);
        assert!((pe[(1, 0)] - 1f64.sin()).abs() < 1e-15);
        assert!((pe[(1, 0)] - 0.841471).abs() < 1e-6);
        assert!((pe[(1, 2)] - (1.0 / 10000f64.powf(0.5)).sin()).abs() < 1e-15);
        assert!((pe[(1, 2)] - 0.0099998).abs() < 1e-7);
        assert!((pe[(1, 3)] - 0.01f64.cos()).abs() < 1e-15);
    }

    #[test]
    fn identity_encoder_on_zero_input_is_the_position_table() {
        let enc = ModalityEncoder::identity(6);
        let y = enc.encode(&DenseMatrix::zeros(5, 6)).unwrap();
        assert_eq!(y, positional_encoding(5, 6));
    }

    #[test]
    fn same_padding_matches_direct_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for kernel in [1, 2, 3, 4] {
            let enc = ModalityEncoder::new(2, 3, kernel, &mut rng).unwrap();
            let x = DenseMatrix::from_fn(5, 2, |i, j| (i * 2 + j) as f64 * 0.3 - 1.0);
            let y = enc.encode(&x).unwrap();
            let pe = positional_encoding(5, 3);
            let w = &enc.conv.layers[0];
            let left = (kernel - 1) as i64 / 2;
            for u in 0..5i64 {
                for o in 0..3 {
                    let mut acc = w.bias[o];
                    for j in 0..kernel as i64 {
                        let src = u + j - left;
                        if !(0..5).contains(&src) {
                            continue;
                        }
                        for c in 0..2 {
                            acc += x[(src as usize, c)] * w.weight[(j as usize * 2 + c, o)];
                        }
                    }
                    let got = y[(u as usize, o)];
                    assert!((got - acc - pe[(u as usize, o)]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut enc = ModalityEncoder::new(3, 4, 3, &mut rng).unwrap();
        let x = DenseMatrix::from_fn(6, 3, |i, j| ((i * 3 + j) as f64).sin());
        let c = DenseMatrix::from_fn(6, 4, |i, j| ((i + 2 * j) as f64).cos());
        enc.forward(&x).unwrap();
        let grads = enc.backward(&c).unwrap();
        let params = enc.params();
        let loss = |p: &[f64]| {
            let mut e = enc.clone();
            e.set_params(p)?;
            let y = e.encode(&x)?;
            Ok(y.as_slice().iter().zip(c.as_slice()).map(|(a, b)| a * b).sum())
        };
        let coords: Vec<usize> = (0..params.len()).collect();
        let report = check_gradient(loss, &params, &grads, &coords, 1e-5).unwrap();
        assert!(report.max_rel_error <= 1e-6, "{report:?}");
    }

    #[test]
    fn rejects_empty_and_misshaped_input() {
        let enc = ModalityEncoder::identity(3);
        assert!(enc.encode(&DenseMatrix::zeros(0, 3)).is_err());
        assert!(enc.encode(&DenseMatrix::zeros(2, 2)).is_err());
    }
}
