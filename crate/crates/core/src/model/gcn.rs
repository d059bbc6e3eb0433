use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{DenseMatrix, SymmetricMatrix};

/// `D^{-1/2} (A + I) D^{-1/2}` with `D` the degree of `A + I`. Negative
/// off-diagonal weights are clamped to zero and the diagonal of `A` is
/// ignored, so degrees stay at least one.
pub fn normalize_adjacency(a: &SymmetricMatrix<f64>) -> DenseMatrix<f64> {
    let n = a.n();
    let m = a.as_matrix();
    let mut w = DenseMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { m[(i, j)].max(0.0) });
    let inv_sqrt: Vec<f64> = (0..n).map(|i| 1.0 / w.row(i).iter().sum::<f64>().sqrt()).collect();
    for i in 0..n {
        for j in 0..n {
            w[(i, j)] *= inv_sqrt[i] * inv_sqrt[j];
        }
    }
    w
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnOutput {
    /// Node representations after the last layer.
    pub nodes: DenseMatrix<f64>,
    /// Mean over nodes.
    pub pooled: Vec<f64>,
}

fn mean_rows(h: &DenseMatrix<f64>) -> Vec<f64> {
    let inv = 1.0 / h.rows().max(1) as f64;
    (0..h.cols()).map(|j| (0..h.rows()).map(|i| h[(i, j)]).sum::<f64>() * inv).collect()
}

fn layer(adj: &DenseMatrix<f64>, h: &DenseMatrix<f64>, w: &DenseMatrix<f64>) -> Result<(DenseMatrix<f64>, DenseMatrix<f64>)> {
    let p = adj.matmul(h)?;
    let out = p.matmul(w)?.map(|v| v.max(0.0));
    Ok((p, out))
}

/// `H <- ReLU(adj H W)` for every weight, then mean pooling. `adj` is used
/// as given; see [`normalize_adjacency`].
pub fn gcn_forward(features: &DenseMatrix<f64>, adj: &DenseMatrix<f64>, weights: &[DenseMatrix<f64>]) -> Result<GcnOutput> {
    if adj.shape() != (features.rows(), features.rows()) {
        return Err(Error::Shape(format!("adjacency {:?} for {} nodes", adj.shape(), features.rows())));
    }
    let mut h = features.clone();
    for w in weights {
        h = layer(adj, &h, w)?.1;
    }
    let pooled = mean_rows(&h);
    Ok(GcnOutput { nodes: h, pooled })
}

#[derive(Debug, Clone)]
struct Tape {
    adj: DenseMatrix<f64>,
    /// `adj H_l` per layer.
    propagated: Vec<DenseMatrix<f64>>,
    /// Layer outputs `H_{l+1}`.
    outputs: Vec<DenseMatrix<f64>>,
}

/// Stack of bias-free graph convolutions with ReLU.
#[derive(Debug, Clone)]
pub struct Gcn {
    pub weights: Vec<DenseMatrix<f64>>,
    tape: Option<Tape>,
}

impl PartialEq for Gcn {
    fn eq(&self, other: &Self) -> bool {
        self.weights == other.weights
    }
}

impl Gcn {
    /// He-style init, `layers` convolutions `input -> hidden -> ... -> hidden`.
    pub fn new<R: Rng + ?Sized>(input: usize, hidden: usize, layers: usize, rng: &mut R) -> Result<Self> {
        if layers == 0 || input == 0 || hidden == 0 {
            return Err(Error::Config("gcn needs positive depth and widths".into()));
        }
        let weights = (0..layers)
            .map(|l| {
                let fan_in = if l == 0 { input } else { hidden };
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
                DenseMatrix::from_fn(fan_in, hidden, |_, _| normal.sample(rng))
            })
            .collect();
        Ok(Self { weights, tape: None })
    }

    pub fn from_weights(weights: Vec<DenseMatrix<f64>>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::Shape("gcn needs at least one layer".into()));
        }
        for w in weights.windows(2) {
            if w[0].cols() != w[1].rows() {
                return Err(Error::Shape("consecutive gcn weights disagree".into()));
            }
        }
        Ok(Self { weights, tape: None })
    }

    pub fn input_dim(&self) -> usize {
        self.weights[0].rows()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.last().expect("non-empty").cols()
    }

    pub fn shapes(&self) -> Vec<(usize, usize)> {
        self.weights.iter().map(DenseMatrix::shape).collect()
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.as_slice().len()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        self.weights.iter().flat_map(|w| w.as_slice().iter().copied()).collect()
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape(format!("gcn expects {} parameters, got {}", self.num_params(), flat.len())));
        }
        let mut at = 0;
        for w in &mut self.weights {
            let k = w.as_slice().len();
            w.as_mut_slice().copy_from_slice(&flat[at..at + k]);
            at += k;
        }
        Ok(())
    }

    pub fn infer(&self, features: &DenseMatrix<f64>, adj: &DenseMatrix<f64>) -> Result<GcnOutput> {
        gcn_forward(features, adj, &self.weights)
    }

    pub fn forward(&mut self, features: &DenseMatrix<f64>, adj: &DenseMatrix<f64>) -> Result<GcnOutput> {
        if adj.shape() != (features.rows(), features.rows()) {
            return Err(Error::Shape(format!("adjacency {:?} for {} nodes", adj.shape(), features.rows())));
        }
        let mut propagated = Vec::with_capacity(self.weights.len());
        let mut outputs = Vec::with_capacity(self.weights.len());
        let mut h = features.clone();
        for w in &self.weights {
            let (p, out) = layer(adj, &h, w)?;
            propagated.push(p);
            outputs.push(out.clone());
            h = out;
        }
        let pooled = mean_rows(&h);
        self.tape = Some(Tape { adj: adj.clone(), propagated, outputs });
        Ok(GcnOutput { nodes: h, pooled })
    }

    /// Gradient of a loss through the pooled vector; returns `(weight
    /// gradients in [`Gcn::params`] order, feature gradient)`.
    pub fn backward(&mut self, grad_pooled: &[f64]) -> Result<(Vec<f64>, DenseMatrix<f64>)> {
        let tape = self.tape.take().ok_or(Error::NoForward)?;
        let n = tape.adj.rows();
        if grad_pooled.len() != self.output_dim() {
            return Err(Error::Shape("pooled gradient length".into()));
        }
        let inv = 1.0 / n as f64;
        let mut g = DenseMatrix::from_fn(n, self.output_dim(), |_, j| grad_pooled[j] * inv);
        let mut per_layer = vec![Vec::new(); self.weights.len()];
        for l in (0..self.weights.len()).rev() {
            for (d, &y) in g.as_mut_slice().iter_mut().zip(tape.outputs[l].as_slice()) {
                if y <= 0.0 {
                    *d = 0.0;
                }
            }
            per_layer[l] = tape.propagated[l].t_matmul(&g)?.into_vec();
            let dp = g.matmul(&self.weights[l].transpose())?;
            g = tape.adj.t_matmul(&dp)?;
        }
        Ok((per_layer.concat(), g))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::check_gradient;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_propagation() {
        let adj = normalize_adjacency(&SymmetricMatrix::zeros(3));
        assert_eq!(adj, DenseMatrix::identity(3));
        let h = DenseMatrix::from_fn(3, 2, |i, j| (i + 2 * j) as f64);
        let out = gcn_forward(&h, &adj, &[DenseMatrix::identity(2)]).unwrap();
        assert_eq!(out.nodes, h);
        assert_eq!(out.pooled, vec![1.0, 3.0]);
    }

    #[test]
    fn hand_computed_two_node_layer() {
        // A = [[0, 1], [1, 0]] -> A + I has degrees 2, so adj = 0.5 * ones.
        let a = SymmetricMatrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]).unwrap();
        let adj = normalize_adjacency(&a);
        assert!(adj.as_slice().iter().all(|v| (v - 0.5).abs() < 1e-15));
        let h = DenseMatrix::from_rows(&[vec![1.0, -2.0], vec![3.0, 0.0]]).unwrap();
        let w = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![1.0, -1.0]]).unwrap();
        // adj H = [[2, -1], [2, -1]]; (adj H) W = [[1, 1], [1, 1]].
        let out = gcn_forward(&h, &adj, &[w.clone()]).unwrap();
        assert!(out.nodes.as_slice().iter().all(|v| (v - 1.0).abs() < 1e-14));
        // Negating W drives everything through the ReLU floor.
        let out = gcn_forward(&h, &adj, &[w.scale(-1.0)]).unwrap();
        assert_eq!(out.nodes.as_slice(), &[0.0; 4]);
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let adj = normalize_adjacency(&SymmetricMatrix::identity(4));
        let h = DenseMatrix::from_fn(4, 3, |i, j| (i * j) as f64 - 1.0);
        let out = gcn_forward(&h, &adj, &[DenseMatrix::zeros(3, 5), DenseMatrix::zeros(5, 5)]).unwrap();
        assert!(out.pooled.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn shape_mismatch() {
        let adj = DenseMatrix::identity(3);
        assert!(gcn_forward(&DenseMatrix::zeros(2, 2), &adj, &[DenseMatrix::identity(2)]).is_err());
        assert!(gcn_forward(&DenseMatrix::zeros(3, 2), &adj, &[DenseMatrix::identity(3)]).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut gcn = Gcn::new(3, 4, 2, &mut rng).unwrap();
        let a = SymmetricMatrix::new(DenseMatrix::from_fn(5, 5, |i, j| if i == j { 0.0 } else { 0.1 * (i + j) as f64 }))
            .unwrap();
        let adj = normalize_adjacency(&a);
        let h = DenseMatrix::from_fn(5, 3, |i, j| ((i * 3 + j) as f64 * 0.7).sin());
        let c = vec![0.4, -1.0, 0.3, 2.0];
        gcn.forward(&h, &adj).unwrap();
        let (grads, dh) = gcn.backward(&c).unwrap();
        let params = gcn.params();
        let loss = |p: &[f64]| {
            let mut g = gcn.clone();
            g.set_params(p)?;
            Ok(g.infer(&h, &adj)?.pooled.iter().zip(&c).map(|(a, b)| a * b).sum())
        };
        let coords: Vec<usize> = (0..params.len()).collect();
        let report = check_gradient(loss, &params, &grads, &coords, 1e-6).unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");

        let feat_loss = |flat: &[f64]| {
            let x = DenseMatrix::from_vec(5, 3, flat.to_vec())?;
            Ok(gcn.infer(&x, &adj)?.pooled.iter().zip(&c).map(|(a, b)| a * b).sum())
        };
        let coords: Vec<usize> = (0..15).collect();
        let report = check_gradient(feat_loss, h.as_slice(), dh.as_slice(), &coords, 1e-6).unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }
}
