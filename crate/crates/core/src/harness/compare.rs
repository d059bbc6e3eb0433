use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::derive_seed;
use crate::error::{Error, Result};
use crate::linalg::{eigh, frobenius_distance, DenseMatrix, SpectralDecomposition, SymmetricMatrix};
use crate::model::graph::sequence_graph;
use crate::sde::{forward_sample, DiffusionSchedule};

pub const CURVES_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CompareConfig {
    pub num_graphs: usize,
    pub nodes: usize,
    pub feature_dim: usize,
    pub window: usize,
    /// Lag-one correlation of the random feature walk the graphs are built
    /// from.
    pub smoothness: f64,
    pub times: Vec<f64>,
    pub schedule: DiffusionSchedule<f64>,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            num_graphs: 50,
            nodes: 16,
            feature_dim: 8,
            window: 2,
            smoothness: 0.8,
            times: vec![0.001, 0.1, 0.25, 0.5, 0.75, 1.0],
            schedule: DiffusionSchedule::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Space {
    Adjacency,
    Spectral,
}

impl Space {
    pub const ALL: [Space; 2] = [Space::Adjacency, Space::Spectral];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Adjacency => "adjacency",
            Self::Spectral => "spectral",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    /// `||A_t - A||_F / ||A||_F`.
    RelativeFrobenius,
    /// Euclidean distance between sorted spectra.
    SpectralL2,
    /// Let `k` be the number of off-diagonal entries of `A` strictly above
    /// the median magnitude. Fraction of entries whose membership in the
    /// top-`k` magnitudes is the same before and after noising (ties in a
    /// sparse `A` stay below the cut).
    EdgeRetention,
    /// `mean_scale ||A||_F / (std sqrt(dim))`, `dim` the number of
    /// perturbed coordinates.
    Snr,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::RelativeFrobenius, Metric::SpectralL2, Metric::EdgeRetention, Metric::Snr];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::RelativeFrobenius => "relative_frobenius",
            Self::SpectralL2 => "spectral_l2",
            Self::EdgeRetention => "edge_retention",
            Self::Snr => "snr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub graph_id: usize,
    pub space: Space,
    pub t: f64,
    pub metric: Metric,
    pub value: f64,
}

/// Windowed similarity graphs over smooth random feature walks.
pub fn windowed_graphs(config: &CompareConfig, seed: u64) -> Result<Vec<SymmetricMatrix<f64>>> {
    if config.nodes == 0 || config.feature_dim == 0 {
        return Err(Error::Config("graph nodes and feature_dim must be positive".into()));
    }
    let rho = config.smoothness;
    let innov = (1.0 - rho * rho).max(0.0).sqrt();
    (0..config.num_graphs)
        .map(|g| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[g as u64, 0x6772_6170]));
            let mut x = DenseMatrix::zeros(config.nodes, config.feature_dim);
            for u in 0..config.nodes {
                for j in 0..config.feature_dim {
                    let e: f64 = StandardNormal.sample(&mut rng);
                    x[(u, j)] = if u == 0 { e } else { rho * x[(u - 1, j)] + innov * e };
                }
            }
            sequence_graph(&x, config.window)
        })
        .collect()
}

/// Entrywise forward perturbation of `a`, symmetrized afterwards.
/// `noise` holds `n * n` standard normals.
pub fn adjacency_noising(
    a: &SymmetricMatrix<f64>,
    schedule: &DiffusionSchedule<f64>,
    t: f64,
    noise: &[f64],
) -> Result<SymmetricMatrix<f64>> {
    let n = a.n();
    let flat = forward_sample(schedule, a.as_matrix().as_slice(), t, noise)?;
    SymmetricMatrix::new(DenseMatrix::from_vec(n, n, flat)?)
}

/// Forward perturbation of the eigenvalues only; the basis is copied
/// unchanged. `noise` holds `n` standard normals.
pub fn spectral_noising(
    spectrum: &SpectralDecomposition<f64>,
    schedule: &DiffusionSchedule<f64>,
    t: f64,
    noise: &[f64],
) -> Result<SpectralDecomposition<f64>> {
    let eigvals = forward_sample(schedule, &spectrum.eigvals, t, noise)?;
    Ok(SpectralDecomposition { eigvals, eigvecs: spectrum.eigvecs.clone() })
}

/// `min_j max_i |<v_j, u_i>|` over the columns of two orthonormal bases:
/// 1 when every column of `v` matches some column of `u` up to sign.
pub fn subspace_alignment(u: &DenseMatrix<f64>, v: &DenseMatrix<f64>) -> Result<f64> {
    if u.shape() != v.shape() {
        return Err(Error::Shape("bases differ in shape".into()));
    }
    let g = u.t_matmul(v)?;
    Ok((0..g.cols())
        .map(|j| (0..g.rows()).map(|i| g[(i, j)].abs()).fold(0.0, f64::max))
        .fold(f64::INFINITY, f64::min))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n == 0 {
        0.0
    } else if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn upper_magnitudes(a: &SymmetricMatrix<f64>) -> Vec<f64> {
    let n = a.n();
    let mut out = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            out.push(a.get(i, j).abs());
        }
    }
    out
}

/// Indicator of the `k` largest values; ties broken by position.
fn top_k(v: &[f64], k: usize) -> Vec<bool> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[j].total_cmp(&v[i]).then(i.cmp(&j)));
    let mut out = vec![false; v.len()];
    for &i in &idx[..k] {
        out[i] = true;
    }
    out
}

pub fn edge_retention(a: &SymmetricMatrix<f64>, noisy: &SymmetricMatrix<f64>) -> f64 {
    let x = upper_magnitudes(a);
    let y = upper_magnitudes(noisy);
    if x.is_empty() {
        return 1.0;
    }
    let m = median(x.clone());
    let above: Vec<bool> = x.iter().map(|v| *v > m).collect();
    let k = above.iter().filter(|b| **b).count();
    let kept = above.iter().zip(top_k(&y, k)).filter(|(p, q)| **p == *q).count();
    kept as f64 / x.len() as f64
}

fn sorted_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Degradation curves for adjacency-space and spectral-space noising of
/// every graph at every time. Rows are ordered graph, time, space, metric.
pub fn diffusion_space_comparison(
    graphs: &[SymmetricMatrix<f64>],
    schedule: &DiffusionSchedule<f64>,
    times: &[f64],
    seed: u64,
) -> Result<Vec<CurvePoint>> {
    if let Some(t) = times.iter().find(|t| !(**t > 0.0 && **t <= 1.0)) {
        return Err(Error::TimeOutOfRange(*t));
    }
    let mut out = Vec::with_capacity(graphs.len() * times.len() * 8);
    for (g, a) in graphs.iter().enumerate() {
        let n = a.n();
        let spectrum = eigh(a)?;
        let norm = a.frobenius_norm();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[g as u64, 0x6e6f_6973]));
        for &t in times {
            let k = schedule.kernel(t);
            let za: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let zs: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            let noisy_a = adjacency_noising(a, schedule, t, &za)?;
            let noisy_s = spectral_noising(&spectrum, schedule, t, &zs)?.reconstruct();
            for (space, noisy, dim) in [(Space::Adjacency, &noisy_a, n * n), (Space::Spectral, &noisy_s, n)] {
                let rel = if norm > 0.0 { frobenius_distance(noisy, a)? / norm } else { 0.0 };
                let spec = sorted_distance(&eigh(noisy)?.eigvals, &spectrum.eigvals);
                let snr = k.mean_scale * norm / (k.std * (dim as f64).sqrt());
                for (metric, value) in [
                    (Metric::RelativeFrobenius, rel),
                    (Metric::SpectralL2, spec),
                    (Metric::EdgeRetention, edge_retention(a, noisy)),
                    (Metric::Snr, snr),
                ] {
                    out.push(CurvePoint { graph_id: g, space, t, metric, value });
                }
            }
        }
    }
    Ok(out)
}

/// Mean of one metric over graphs.
pub fn mean_curve_value(points: &[CurvePoint], space: Space, t: f64, metric: Metric) -> Option<f64> {
    let vals: Vec<f64> = points
        .iter()
        .filter(|p| p.space == space && p.metric == metric && p.t == t)
        .map(|p| p.value)
        .collect();
    (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Long-format CSV: `graph_id,space,t,metric,value`.
pub fn write_curves_csv<W: Write>(points: &[CurvePoint], mut w: W) -> Result<()> {
    writeln!(w, "#version={CURVES_VERSION}")?;
    writeln!(w, "graph_id,space,t,metric,value")?;
    for p in points {
        writeln!(w, "{},{},{},{},{}", p.graph_id, p.space.as_str(), p.t, p.metric.as_str(), p.value)?;
    }
    Ok(())
}
