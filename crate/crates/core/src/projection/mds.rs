use ndarray::Array2;

use super::eigen::top_eigenpairs;
use super::{DistanceMatrix, Embedding2D, ProjectionMethod};
use crate::error::{Error, Result};

/// Classical (Torgerson) MDS.
///
/// `B = -1/2 J D^2 J`, coordinates are the top `out_dim` eigenvectors scaled by
/// `sqrt(max(lambda, 0))`. Each output column is negated if needed so that its
/// entry of largest magnitude is positive (first such row on ties).
pub fn classical_mds(dist: &DistanceMatrix, out_dim: usize) -> Result<Embedding2D> {
    let n = dist.len();
    if out_dim == 0 || out_dim + 1 > n {
        return Err(Error::InvalidParameter(format!(
            "out_dim must be in [1, N-1] = [1, {}], got {out_dim}",
            n.saturating_sub(1)
        )));
    }
    // re-check symmetry so a hand-built matrix cannot bypass it
    let d = DistanceMatrix::new(dist.matrix().clone())?;
    let sq = d.matrix().mapv(|v| v * v);

    let row_means: Vec<f64> = sq.rows().into_iter().map(|r| r.sum() / n as f64).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut b = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            // symmetric input, so column means equal row means
            b[[i, j]] = -0.5 * (sq[[i, j]] - row_means[i] - row_means[j] + grand);
        }
    }

    let eig = top_eigenpairs(&b, out_dim);
    let scale = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if eig.values[0].is_nan() || eig.values[0] <= 1e-12 * scale {
        return Err(Error::DegenerateEmbedding);
    }

    let mut coords = Array2::zeros((n, out_dim));
    for k in 0..out_dim {
        let v = eig.vectors.column(k);
        let mut pivot = 0;
        for i in 1..n {
            if v[i].abs() > v[pivot].abs() {
                pivot = i;
            }
        }
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        let s = eig.values[k].max(0.0).sqrt() * sign;
        for i in 0..n {
            coords[[i, k]] = v[i] * s;
        }
    }
    Ok(Embedding2D {
        coords,
        method: ProjectionMethod::Mds { out_dim },
    })
}
