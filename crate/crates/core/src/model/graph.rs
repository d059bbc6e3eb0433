use super::data::{EncodedModalities, Modality};
use crate::error::{Error, Result};
use crate::linalg::{eigh, DenseMatrix, SpectralDecomposition, SymmetricMatrix};

pub const DEFAULT_WINDOW: usize = 2;

/// Weight given to an admissible edge when one endpoint has a zero feature
/// vector and the cosine is undefined.
pub const DEGENERATE_WEIGHT: f64 = 1e-3;

/// Bumped whenever the edge rule changes; stored in model checkpoints.
pub const GRAPH_RULE_VERSION: u32 = 1;

/// Node `(modality, utterance)`.
pub type Node = (Modality, usize);

/// Same-modality nodes within `window` utterances, or different modalities
/// of the same utterance.
#[inline]
pub fn edge_allowed(a: Node, b: Node, window: usize) -> bool {
    if a == b {
        return false;
    }
    if a.0 == b.0 {
        a.1.abs_diff(b.1) <= window
    } else {
        a.1 == b.1
    }
}

/// Cosine similarity clipped to `[0, 1]`; `None` if either vector is zero.
pub fn clipped_cosine(x: &[f64], y: &[f64]) -> Option<f64> {
    let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nx == 0.0 || ny == 0.0 {
        return None;
    }
    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    Some((dot / (nx * ny)).clamp(0.0, 1.0))
}

/// Adjacency over `nodes` (row `i` of `features` belongs to `nodes[i]`).
/// Returns the matrix and whether any admissible edge hit a zero vector.
pub fn similarity_adjacency(
    features: &DenseMatrix<f64>,
    nodes: &[Node],
    window: usize,
) -> Result<(SymmetricMatrix<f64>, bool)> {
    let n = nodes.len();
    if features.rows() != n {
        return Err(Error::Shape(format!("{} feature rows for {n} nodes", features.rows())));
    }
    let mut a = DenseMatrix::zeros(n, n);
    let mut degenerate = false;
    for i in 0..n {
        for j in i + 1..n {
            if !edge_allowed(nodes[i], nodes[j], window) {
                continue;
            }
            let w = clipped_cosine(features.row(i), features.row(j)).unwrap_or_else(|| {
                degenerate = true;
                DEGENERATE_WEIGHT
            });
            a[(i, j)] = w;
            a[(j, i)] = w;
        }
    }
    Ok((SymmetricMatrix::new(a)?, degenerate))
}

/// Windowed similarity graph over a single feature sequence.
pub fn sequence_graph(features: &DenseMatrix<f64>, window: usize) -> Result<SymmetricMatrix<f64>> {
    let nodes: Vec<Node> = (0..features.rows()).map(|u| (Modality::Text, u)).collect();
    Ok(similarity_adjacency(features, &nodes, window)?.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConversationGraph {
    /// Row `i` of `features` and of `adjacency` belongs to `nodes[i]`;
    /// modalities are stacked in canonical order, utterances ascending.
    pub nodes: Vec<Node>,
    pub features: DenseMatrix<f64>,
    pub adjacency: SymmetricMatrix<f64>,
    pub spectrum: SpectralDecomposition<f64>,
    /// Set when some edge weight fell back to [`DEGENERATE_WEIGHT`].
    pub degenerate: bool,
}

impl ConversationGraph {
    pub fn modalities(&self) -> Vec<Modality> {
        let mut out: Vec<Modality> = self.nodes.iter().map(|n| n.0).collect();
        out.dedup();
        out
    }

    /// Node indices of one modality, in utterance order.
    pub fn indices_of(&self, m: Modality) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].0 == m).collect()
    }

    /// Intra-modality `N x N` block of the adjacency.
    pub fn block(&self, m: Modality) -> Result<SymmetricMatrix<f64>> {
        let idx = self.indices_of(m);
        if idx.is_empty() {
            return Err(Error::Empty(format!("modality {m:?} is not in the graph")));
        }
        let a = self.adjacency.as_matrix();
        SymmetricMatrix::new(DenseMatrix::from_fn(idx.len(), idx.len(), |i, j| a[(idx[i], idx[j])]))
    }
}

/// Stacks the present blocks of `encoded` into one graph and decomposes it.
pub fn build_graph(encoded: &EncodedModalities, window: usize) -> Result<ConversationGraph> {
    let present = encoded.present();
    let (n, d) = encoded.shape().ok_or_else(|| Error::Empty("no encoded modality".into()))?;
    let mut nodes = Vec::with_capacity(present.len() * n);
    let mut data = Vec::with_capacity(present.len() * n * d);
    for &m in &present {
        let block = encoded.get(m).expect("present");
        if block.shape() != (n, d) {
            return Err(Error::Shape(format!("modality {m:?} is {:?}, expected {:?}", block.shape(), (n, d))));
        }
        nodes.extend((0..n).map(|u| (m, u)));
        data.extend_from_slice(block.as_slice());
    }
    let features = DenseMatrix::from_vec(nodes.len(), d, data)?;
    let (adjacency, degenerate) = similarity_adjacency(&features, &nodes, window)?;
    let spectrum = eigh(&adjacency)?;
    Ok(ConversationGraph { nodes, features, adjacency, spectrum, degenerate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn encoded(blocks: [Option<DenseMatrix<f64>>; 3]) -> EncodedModalities {
        EncodedModalities { blocks }
    }

    #[test]
    fn single_node_graph() {
        let g = build_graph(&encoded([Some(DenseMatrix::from_vec(1, 2, vec![0.3, 0.4]).unwrap()), None, None]), 2)
            .unwrap();
        assert_eq!(g.adjacency.get(0, 0), 0.0);
        assert_eq!(g.spectrum.eigvals, vec![0.0]);
    }

    #[test]
    fn identical_pair_has_unit_edge() {
        let x = DenseMatrix::from_rows(&[vec![1.0, 2.0, -1.0], vec![1.0, 2.0, -1.0]]).unwrap();
        let g = build_graph(&encoded([None, Some(x), None]), 1).unwrap();
        assert!((g.adjacency.get(0, 1) - 1.0).abs() < 1e-15);
        assert!((g.spectrum.eigvals[0] + 1.0).abs() < 1e-12);
        assert!((g.spectrum.eigvals[1] - 1.0).abs() < 1e-12);

        // Two modalities of one utterance connect regardless of the window.
        let y = DenseMatrix::from_vec(1, 2, vec![0.5, 0.5]).unwrap();
        let g = build_graph(&encoded([Some(y.clone()), None, Some(y)]), 0).unwrap();
        assert!((g.adjacency.get(0, 1) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_brute_force_pairwise_rule() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let (n, d, window) = (4, 5, 2);
        let blocks: Vec<DenseMatrix<f64>> =
            (0..3).map(|_| DenseMatrix::from_fn(n, d, |_, _| rng.random_range(-1.0..1.0))).collect();
        let g = build_graph(&encoded([Some(blocks[0].clone()), Some(blocks[1].clone()), Some(blocks[2].clone())]), window)
            .unwrap();
        assert_eq!(g.nodes.len(), 12);
        for i in 0..12 {
            for j in 0..12 {
                let (mi, ui) = (i / n, i % n);
                let (mj, uj) = (j / n, j % n);
                let linked = if i == j {
                    false
                } else if mi == mj {
                    (ui as i64 - uj as i64).abs() <= window as i64
                } else {
                    ui == uj
                };
                let want = if linked {
                    let (x, y) = (blocks[mi].row(ui), blocks[mj].row(uj));
                    let dot: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
                    let nx: f64 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let ny: f64 = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                    (dot / nx / ny).max(0.0).min(1.0)
                } else {
                    0.0
                };
                assert!((g.adjacency.get(i, j) - want).abs() < 1e-14, "({i},{j})");
            }
        }
        let rec = g.spectrum.reconstruct();
        let err = crate::linalg::frobenius_distance(&rec, &g.adjacency).unwrap() / g.adjacency.frobenius_norm();
        assert!(err <= 1e-8);
        assert!(!g.degenerate);
    }

    #[test]
    fn zero_features_give_flagged_uniform_graph() {
        let g = build_graph(&encoded([Some(DenseMatrix::zeros(3, 4)), Some(DenseMatrix::zeros(3, 4)), None]), 1)
            .unwrap();
        assert!(g.degenerate);
        assert!(g.adjacency.as_matrix().as_slice().iter().all(|v| v.is_finite()));
        assert_eq!(g.adjacency.get(0, 1), DEGENERATE_WEIGHT);
        assert_eq!(g.adjacency.get(0, 3), DEGENERATE_WEIGHT);
        assert_eq!(g.adjacency.get(0, 4), 0.0);
    }

    #[test]
    fn blocks_extract_intra_modality_edges() {
        let x = DenseMatrix::from_fn(3, 2, |i, j| (i + j) as f64 + 1.0);
        let g = build_graph(&encoded([Some(x.clone()), None, Some(x.clone())]), 2).unwrap();
        let b = g.block(Modality::Visual).unwrap();
        assert_eq!(b, sequence_graph(&x, 2).unwrap());
        assert!(g.block(Modality::Audio).is_err());
        assert_eq!(g.modalities(), vec![Modality::Text, Modality::Visual]);
    }
}
