use super::{DenseMatrix, SymmetricMatrix};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Iteration cap for the cyclic Jacobi solver.
pub const MAX_SWEEPS: usize = 100;

/// `A = U diag(eigvals) U^T` with eigenvalues ascending and the eigenvectors
/// stored as the columns of `eigvecs`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralDecomposition<T> {
    pub eigvals: Vec<T>,
    pub eigvecs: DenseMatrix<T>,
}

impl<T: Real> SpectralDecomposition<T> {
    #[inline]
    pub fn n(&self) -> usize {
        self.eigvals.len()
    }

    /// `U diag(eigvals) U^T`.
    pub fn reconstruct(&self) -> SymmetricMatrix<T> {
        self.reconstruct_with(&self.eigvals)
            .expect("decomposition eigenvalue count matches its basis")
    }

    /// Reassembles a matrix from this basis and an arbitrary eigenvalue
    /// vector. The eigenvalues need not be sorted.
    pub fn reconstruct_with(&self, eigvals: &[T]) -> Result<SymmetricMatrix<T>> {
        reconstruct_from_basis(&self.eigvecs, eigvals)
    }
}

/// `U diag(eigvals) U^T` for any square basis `U`.
pub fn reconstruct_from_basis<T: Real>(
    basis: &DenseMatrix<T>,
    eigvals: &[T],
) -> Result<SymmetricMatrix<T>> {
    let n = basis.rows();
    if !basis.is_square() || eigvals.len() != n {
        return Err(Error::Shape(format!(
            "basis {}x{} with {} eigenvalues",
            basis.rows(),
            basis.cols(),
            eigvals.len()
        )));
    }
    let mut out = DenseMatrix::zeros(n, n);
    for i in 0..n {
        let ui = basis.row(i);
        for j in i..n {
            let uj = basis.row(j);
            let mut acc = T::zero();
            for k in 0..n {
                acc += ui[k] * eigvals[k] * uj[k];
            }
            out[(i, j)] = acc;
            out[(j, i)] = acc;
        }
    }
    SymmetricMatrix::new(out)
}

fn off_diagonal_norm<T: Real>(a: &DenseMatrix<T>) -> T {
    let n = a.rows();
    let mut acc = T::zero();
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += a[(i, j)] * a[(i, j)];
            }
        }
    }
    acc.sqrt()
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Rotations are applied in row-cyclic order `(0,1), (0,2), ..., (n-2,n-1)`
/// and sweeps repeat until the off-diagonal Frobenius norm drops to
/// `n * eps * ||A||_F`. Eigenvalues come out ascending and each eigenvector
/// is flipped so that its largest-magnitude component (first one on ties) is
/// non-negative, which makes the output a deterministic function of the input.
pub fn eigh<T: Real>(m: &SymmetricMatrix<T>) -> Result<SpectralDecomposition<T>> {
    let n = m.n();
    if n == 0 {
        return Err(Error::Shape("empty matrix".into()));
    }
    let mut a = m.as_matrix().clone();
    let mut v = DenseMatrix::<T>::identity(n);
    let tol = T::lit(n as f64) * T::epsilon() * a.frobenius_norm();

    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= tol {
            converged = true;
            break;
        }
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == T::zero() {
                    continue;
                }
                let tau = (a[(q, q)] - a[(p, p)]) / (T::lit(2.0) * apq);
                let t = tau.signum() / (tau.abs() + T::one().hypot(tau));
                let t = if tau == T::zero() { T::one() } else { t };
                let c = T::one() / T::one().hypot(t);
                let s = t * c;
                rotate(&mut a, &mut v, p, q, c, s);
            }
        }
    }
    if !converged {
        let residual = off_diagonal_norm(&a);
        if residual > tol {
            return Err(Error::NoConvergence { sweeps: MAX_SWEEPS, residual: residual.to_f64_lossy() });
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a[(i, i)]
            .partial_cmp(&a[(j, j)])
            .expect("finite eigenvalues")
            .then(i.cmp(&j))
    });
    let eigvals: Vec<T> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut eigvecs = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut pivot = 0;
        for k in 0..n {
            if v[(k, src)].abs() > v[(pivot, src)].abs() {
                pivot = k;
            }
        }
        let flip = v[(pivot, src)] < T::zero();
        for k in 0..n {
            let x = v[(k, src)];
            eigvecs[(k, dst)] = if flip { -x } else { x };
        }
    }
    Ok(SpectralDecomposition { eigvals, eigvecs })
}

/// `A <- J^T A J`, `V <- V J` for the plane rotation in `(p, q)`.
fn rotate<T: Real>(a: &mut DenseMatrix<T>, v: &mut DenseMatrix<T>, p: usize, q: usize, c: T, s: T) {
    let n = a.rows();
    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = T::zero();
    a[(q, p)] = T::zero();
    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::frobenius_distance;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> SymmetricMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DenseMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        SymmetricMatrix::new(m).unwrap()
    }

    /// det(A - x I) by Gaussian elimination with partial pivoting.
    fn shifted_det(a: &SymmetricMatrix<f64>, x: f64) -> f64 {
        let n = a.n();
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| a.get(i, j) - if i == j { x } else { 0.0 }).collect())
            .collect();
        let mut det = 1.0;
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
            if m[piv][col] == 0.0 {
                return 0.0;
            }
            if piv != col {
                m.swap(piv, col);
                det = -det;
            }
            det *= m[col][col];
            for r in (col + 1)..n {
                let f = m[r][col] / m[col][col];
                for c in col..n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
        det
    }

    /// Roots of the characteristic polynomial: sign changes on a fine grid
    /// over the Gershgorin interval, refined by bisection.
    fn char_poly_roots(a: &SymmetricMatrix<f64>) -> Vec<f64> {
        let n = a.n();
        let radius = (0..n)
            .map(|i| (0..n).map(|j| a.get(i, j).abs()).sum::<f64>())
            .fold(0.0, f64::max)
            + 1e-3;
        let steps = 200_000;
        let h = 2.0 * radius / steps as f64;
        let mut roots = Vec::new();
        let mut x0 = -radius;
        let mut f0 = shifted_det(a, x0);
        for k in 1..=steps {
            let x1 = -radius + k as f64 * h;
            let f1 = shifted_det(a, x1);
            if f0 == 0.0 {
                roots.push(x0);
            } else if f0.signum() != f1.signum() && f1 != 0.0 {
                let (mut lo, mut hi, mut flo) = (x0, x1, f0);
                for _ in 0..100 {
                    let mid = 0.5 * (lo + hi);
                    let fm = shifted_det(a, mid);
                    if fm.signum() == flo.signum() {
                        lo = mid;
                        flo = fm;
                    } else {
                        hi = mid;
                    }
                }
                roots.push(0.5 * (lo + hi));
            }
            x0 = x1;
            f0 = f1;
        }
        roots
    }

    #[test]
    fn identity_spectrum() {
        let d = eigh(&SymmetricMatrix::<f64>::identity(3)).unwrap();
        assert_eq!(d.eigvals, vec![1.0, 1.0, 1.0]);
        let err = frobenius_distance(&d.reconstruct(), &SymmetricMatrix::identity(3)).unwrap();
        assert!(err < 1e-15);
    }

    #[test]
    fn two_by_two_swap() {
        let m = SymmetricMatrix::from_rows(&[vec![0.0f64, 1.0], vec![1.0, 0.0]]).unwrap();
        let d = eigh(&m).unwrap();
        assert!((d.eigvals[0] + 1.0).abs() < 1e-15);
        assert!((d.eigvals[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn matches_characteristic_polynomial_roots() {
        for seed in 0..3 {
            let m = random_symmetric(8, 100 + seed);
            let roots = char_poly_roots(&m);
            assert_eq!(roots.len(), 8, "oracle must isolate every root");
            let d = eigh(&m).unwrap();
            for (got, want) in d.eigvals.iter().zip(&roots) {
                assert!((got - want).abs() < 1e-6, "{got} vs {want}");
            }
        }
    }

    #[test]
    fn round_trip_sixteen() {
        let m = random_symmetric(16, 7);
        let d = eigh(&m).unwrap();
        let rel = frobenius_distance(&d.reconstruct(), &m).unwrap() / m.frobenius_norm();
        assert!(rel <= 1e-8, "relative error {rel}");
    }

    #[test]
    fn null_spectrum_gives_zero_matrix() {
        let d = eigh(&random_symmetric(5, 3)).unwrap();
        let z = d.reconstruct_with(&[0.0; 5]).unwrap();
        assert!(z.as_matrix().as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn unit_basis_reconstruction() {
        let d = SpectralDecomposition { eigvals: vec![1.0; 3], eigvecs: DenseMatrix::identity(3) };
        assert_eq!(d.reconstruct(), SymmetricMatrix::identity(3));
    }

    #[test]
    fn sign_convention_and_order() {
        let d = eigh(&random_symmetric(6, 11)).unwrap();
        assert!(d.eigvals.windows(2).all(|w| w[0] <= w[1]));
        for j in 0..6 {
            let col = d.eigvecs.column(j);
            let big = col.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            assert!(big >= 0.0);
        }
    }

    #[test]
    fn single_precision_round_trip() {
        let m64 = random_symmetric(10, 5);
        let m32 = SymmetricMatrix::new(DenseMatrix::from_fn(10, 10, |i, j| m64.get(i, j) as f32)).unwrap();
        let d = eigh(&m32).unwrap();
        let rel = frobenius_distance(&d.reconstruct(), &m32).unwrap() / m32.frobenius_norm();
        assert!(rel < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn spectral_invariants(n in 1usize..40, seed in any::<u64>()) {
            let m = random_symmetric(n, seed);
            let d = eigh(&m).unwrap();
            let gram = d.eigvecs.t_matmul(&d.eigvecs).unwrap();
            for i in 0..n {
                for j in 0..n {
                    let target = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((gram[(i, j)] - target).abs() <= 1e-8);
                }
            }
            let rel = frobenius_distance(&d.reconstruct(), &m).unwrap() / m.frobenius_norm().max(1e-300);
            prop_assert!(rel <= 1e-8);
            let trace_err = (d.eigvals.iter().sum::<f64>() - m.trace()).abs();
            prop_assert!(trace_err <= 1e-8 * n as f64);

            let again = eigh(&m).unwrap();
            prop_assert_eq!(&again, &d);

            let round = eigh(&d.reconstruct()).unwrap();
            for (a, b) in round.eigvals.iter().zip(&d.eigvals) {
                prop_assert!((a - b).abs() <= 1e-8);
            }
        }

        #[test]
        fn frobenius_triangle_inequality(n in 1usize..8, seed in any::<u64>()) {
            let a = random_symmetric(n, seed);
            let b = random_symmetric(n, seed.wrapping_add(1));
            let c = random_symmetric(n, seed.wrapping_add(2));
            let ab = frobenius_distance(&a, &b).unwrap();
            let bc = frobenius_distance(&b, &c).unwrap();
            let ac = frobenius_distance(&a, &c).unwrap();
            prop_assert!(ac <= ab + bc + 1e-12);
            let direct: f64 = (0..n)
                .flat_map(|i| (0..n).map(move |j| (i, j)))
                .map(|(i, j)| (a.get(i, j) - b.get(i, j)).powi(2))
                .sum::<f64>()
                .sqrt();
            prop_assert_eq!(ab, direct);
        }
    }
}
