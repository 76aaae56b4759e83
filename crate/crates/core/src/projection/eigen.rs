//! Symmetric eigensolvers: cyclic Jacobi for small matrices, subspace iteration
//! with Rayleigh-Ritz (Jacobi on the projected block) for the top pairs of large
//! ones. Both are deterministic.

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Off-diagonal Frobenius norm tolerance, relative to the matrix norm.
pub const JACOBI_TOL: f64 = 1e-10;
/// Matrices up to this size are diagonalized in full.
const JACOBI_LIMIT: usize = 256;
const MAX_SWEEPS: usize = 100;
const SUBSPACE_EXTRA: usize = 10;
const MAX_SUBSPACE_ITERS: usize = 500;

/// Eigenvalues sorted descending with matching unit eigenvectors as columns.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairs {
    pub values: Array1<f64>,
    pub vectors: Array2<f64>,
}

fn off_diagonal_norm(a: &Array2<f64>) -> f64 {
    let n = a.nrows();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += a[[i, j]] * a[[i, j]];
            }
        }
    }
    s.sqrt()
}

fn sorted_descending(values: Array1<f64>, vectors: Array2<f64>) -> EigenPairs {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // stable sort keeps ties in index order
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    let values = order.iter().map(|&i| values[i]).collect();
    let vectors = vectors.select(Axis(1), &order);
    EigenPairs { values, vectors }
}

/// Full eigendecomposition of a symmetric matrix by cyclic Jacobi rotations.
pub fn symmetric_eigen_jacobi(m: &Array2<f64>) -> EigenPairs {
    let n = m.nrows();
    let mut a = m.clone();
    let mut v = Array2::<f64>::eye(n);
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt();

    for _ in 0..MAX_SWEEPS {
        if off_diagonal_norm(&a) <= JACOBI_TOL * norm {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[[p, q]];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    sorted_descending(a.diag().to_owned(), v)
}

/// Modified Gram-Schmidt, applied twice. Columns that collapse are replaced by
/// zero vectors.
fn orthonormalize(q: &mut Array2<f64>) {
    let p = q.ncols();
    for _ in 0..2 {
        for j in 0..p {
            for i in 0..j {
                let proj = q.column(i).dot(&q.column(j));
                let ci = q.column(i).to_owned();
                q.column_mut(j).scaled_add(-proj, &ci);
            }
            let nrm = q.column(j).dot(&q.column(j)).sqrt();
            if nrm > 1e-300 {
                q.column_mut(j).mapv_inplace(|x| x / nrm);
            } else {
                q.column_mut(j).fill(0.0);
            }
        }
    }
}

/// Top `k` eigenpairs (largest eigenvalues) of a symmetric matrix.
///
/// The subspace path assumes the dominant spectrum is non-negative, which holds
/// for double-centered Euclidean squared distances.
pub fn top_eigenpairs(m: &Array2<f64>, k: usize) -> EigenPairs {
    let n = m.nrows();
    let k = k.min(n);
    if n <= JACOBI_LIMIT {
        let full = symmetric_eigen_jacobi(m);
        return EigenPairs {
            values: full.values.slice(s![..k]).to_owned(),
            vectors: full.vectors.slice(s![.., ..k]).to_owned(),
        };
    }

    let p = (k + SUBSPACE_EXTRA).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut q = Array2::from_shape_simple_fn((n, p), || StandardNormal.sample(&mut rng));
    orthonormalize(&mut q);
    let mut w = m.dot(&q);
    let mut prev: Option<Array1<f64>> = None;
    let mut ritz = Array1::zeros(p);

    for _ in 0..MAX_SUBSPACE_ITERS {
        let t = q.t().dot(&w);
        let t = (&t + &t.t()) * 0.5;
        let small = symmetric_eigen_jacobi(&t);
        q = q.dot(&small.vectors);
        w = w.dot(&small.vectors);
        ritz = small.values;

        let scale = ritz[0].abs().max(f64::MIN_POSITIVE);
        let drift_ok = prev
            .as_ref()
            .is_some_and(|pv| (0..k).all(|i| (ritz[i] - pv[i]).abs() <= JACOBI_TOL * scale));
        let residual_ok = (0..k).all(|i| {
            let r = &w.column(i) - &(&q.column(i) * ritz[i]);
            r.dot(&r).sqrt() <= 1e-8 * scale
        });
        if drift_ok && residual_ok {
            break;
        }
        prev = Some(ritz.clone());

        q = w;
        orthonormalize(&mut q);
        w = m.dot(&q);
    }

    EigenPairs {
        values: ritz.slice(s![..k]).to_owned(),
        vectors: q.slice(s![.., ..k]).to_owned(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn random_symmetric(n: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Array2<f64> = Array2::from_shape_simple_fn((n, n), || StandardNormal.sample(&mut rng));
        (&a + &a.t()) * 0.5
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let m = random_symmetric(12, 3);
        let e = symmetric_eigen_jacobi(&m);
        let recon = e.vectors.dot(&Array2::from_diag(&e.values)).dot(&e.vectors.t());
        for (a, b) in recon.iter().zip(m.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        let gram = e.vectors.t().dot(&e.vectors);
        for i in 0..12 {
            for j in 0..12 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((gram[[i, j]] - expect).abs() < 1e-12);
            }
        }
        assert!(e.values.windows(2).into_iter().all(|w| w[0] >= w[1]));
    }

    #[test]
    fn jacobi_diagonal_input() {
        let e = symmetric_eigen_jacobi(&array![[1.0, 0.0], [0.0, 3.0]]);
        assert_eq!(e.values.to_vec(), vec![3.0, 1.0]);
    }

    #[test]
    fn subspace_iteration_matches_jacobi() {
        // low-rank PSD plus small noise, larger than the Jacobi limit
        let n = 300;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x: Array2<f64> = Array2::from_shape_simple_fn((n, 5), || StandardNormal.sample(&mut rng));
        let m = x.dot(&x.t());
        let top = top_eigenpairs(&m, 2);
        let full = symmetric_eigen_jacobi(&m);
        for i in 0..2 {
            assert!((top.values[i] - full.values[i]).abs() <= 1e-8 * full.values[0]);
            let dot = top.vectors.column(i).dot(&full.vectors.column(i)).abs();
            assert!((dot - 1.0).abs() < 1e-8);
        }
    }
}
