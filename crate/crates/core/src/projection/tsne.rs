//! Exact O(N^2) t-SNE.
//!
//! Per-point Gaussian bandwidths are found by bisection on the precision so the
//! conditional distribution's entropy matches `ln(perplexity)` within 1e-5.
//! Optimization is plain gradient descent with momentum and per-coordinate
//! gains, early exaggeration for the first iterations. All reductions run in a
//! fixed order, so the result does not depend on the rayon thread count.

use ndarray::{Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use super::{Embedding2D, ProjectionMethod};
use crate::error::{Error, Result};

const ENTROPY_TOL: f64 = 1e-5;
const MAX_BISECTION_STEPS: usize = 50;
const P_FLOOR: f64 = 1e-12;
const KL_EVERY: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TsneParams {
    pub perplexity: f64,
    pub iters: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub momentum_switch: usize,
    pub init_scale: f64,
    pub min_gain: f64,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: 100.0,
            iters: 1000,
            learning_rate: 200.0,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            momentum_switch: 250,
            init_scale: 1e-4,
            min_gain: 0.01,
            seed: 0,
        }
    }
}

impl TsneParams {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TsneResult {
    pub embedding: Embedding2D,
    /// `(iteration, KL(P || Q))` checkpoints with the un-exaggerated P. The first
    /// entry is taken right after early exaggeration ends; the last one is the
    /// final embedding.
    pub kl_history: Vec<(usize, f64)>,
}

impl TsneResult {
    pub fn final_kl(&self) -> f64 {
        self.kl_history.last().map_or(f64::NAN, |&(_, kl)| kl)
    }
}

fn squared_distances(points: ArrayView2<f64>) -> Array2<f64> {
    let n = points.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let pi = points.row(i);
            (0..n)
                .map(|j| {
                    pi.iter()
                        .zip(points.row(j).iter())
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                })
                .collect()
        })
        .collect();
    Array2::from_shape_vec((n, n), rows.concat()).expect("square")
}

/// Conditional affinities of row `i`; returns the row and the achieved entropy.
fn conditional_row(d2: &[f64], i: usize, log_perp: f64) -> (Vec<f64>, f64) {
    let n = d2.len();
    let dmin = d2
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = d2.iter().map(|&d| d - dmin).collect();
    let mean_shift = shifted
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .sum::<f64>()
        / (n - 1) as f64;

    let eval = |beta: f64| -> (Vec<f64>, f64) {
        let mut p: Vec<f64> = shifted
            .iter()
            .enumerate()
            .map(|(j, &d)| if j == i { 0.0 } else { (-d * beta).exp() })
            .collect();
        let sum: f64 = p.iter().sum();
        let weighted: f64 = p.iter().zip(&shifted).map(|(pj, d)| pj * d).sum();
        let h = sum.ln() + beta * weighted / sum;
        p.iter_mut().for_each(|v| *v /= sum);
        (p, h)
    };

    let mut beta = if mean_shift > 0.0 { 1.0 / mean_shift } else { 1.0 };
    let (mut lo, mut hi) = (None::<f64>, None::<f64>);
    let (mut p, mut h) = eval(beta);
    for _ in 0..MAX_BISECTION_STEPS {
        let diff = h - log_perp;
        if diff.abs() < ENTROPY_TOL {
            break;
        }
        if diff > 0.0 {
            lo = Some(beta);
            beta = hi.map_or(beta * 2.0, |h| (beta + h) / 2.0);
        } else {
            hi = Some(beta);
            beta = lo.map_or(beta / 2.0, |l| (beta + l) / 2.0);
        }
        (p, h) = eval(beta);
    }
    (p, h)
}

/// Row-conditional affinities `p_{j|i}` and the entropy each row reached.
pub(crate) fn conditional_affinities(points: ArrayView2<f64>, perplexity: f64) -> (Array2<f64>, Vec<f64>) {
    let n = points.nrows();
    let d2 = squared_distances(points);
    let log_perp = perplexity.ln();
    let rows: Vec<(Vec<f64>, f64)> = (0..n)
        .into_par_iter()
        .map(|i| conditional_row(d2.row(i).as_slice().expect("standard layout"), i, log_perp))
        .collect();
    let entropies = rows.iter().map(|(_, h)| *h).collect();
    let flat: Vec<f64> = rows.into_iter().flat_map(|(r, _)| r).collect();
    (Array2::from_shape_vec((n, n), flat).expect("square"), entropies)
}

fn joint_affinities(points: ArrayView2<f64>, perplexity: f64) -> Array2<f64> {
    let (cond, _) = conditional_affinities(points, perplexity);
    let n = cond.nrows();
    let mut p = &cond + &cond.t();
    p.mapv_inplace(|v| (v / (2.0 * n as f64)).max(P_FLOOR));
    for i in 0..n {
        p[[i, i]] = 0.0;
    }
    p
}

/// Student-t kernel rows `1 / (1 + |y_i - y_j|^2)` (zero diagonal) and their total.
fn student_kernel(y: &Array2<f64>) -> (Array2<f64>, f64) {
    let n = y.nrows();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        let dx = y[[i, 0]] - y[[j, 0]];
                        let dy = y[[i, 1]] - y[[j, 1]];
                        1.0 / (1.0 + dx * dx + dy * dy)
                    }
                })
                .collect()
        })
        .collect();
    let row_sums: Vec<f64> = rows.iter().map(|r| r.iter().sum::<f64>()).collect();
    let z = row_sums.iter().sum::<f64>();
    (Array2::from_shape_vec((n, n), rows.concat()).expect("square"), z)
}

fn kl_divergence(p: &Array2<f64>, num: &Array2<f64>, z: f64) -> f64 {
    let n = p.nrows();
    let rows: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| {
                    let pij = p[[i, j]];
                    let qij = (num[[i, j]] / z).max(f64::MIN_POSITIVE);
                    pij * (pij / qij).ln()
                })
                .sum::<f64>()
        })
        .collect();
    rows.iter().sum()
}

pub fn tsne(points: ArrayView2<f64>, params: &TsneParams) -> Result<TsneResult> {
    let n = points.nrows();
    if n < 4 {
        return Err(Error::InvalidParameter(format!(
            "t-SNE needs at least 4 points, got {n}"
        )));
    }
    if !(params.perplexity > 1.0 && params.perplexity < n as f64) {
        return Err(Error::InvalidParameter(format!(
            "perplexity must lie in (1, {n}), got {}",
            params.perplexity
        )));
    }
    if params.iters == 0 || params.learning_rate.is_nan() || params.learning_rate <= 0.0 {
        return Err(Error::InvalidParameter(
            "iters and learning_rate must be positive".into(),
        ));
    }

    let p = joint_affinities(points, params.perplexity);

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut y = Array2::from_shape_simple_fn((n, 2), || {
        let z: f64 = StandardNormal.sample(&mut rng);
        z * params.init_scale
    });
    let mut velocity = Array2::<f64>::zeros((n, 2));
    let mut gains = Array2::<f64>::ones((n, 2));
    let mut kl_history = Vec::new();

    for it in 0..params.iters {
        let exaggeration = if it < params.exaggeration_iters {
            params.early_exaggeration
        } else {
            1.0
        };
        let momentum = if it < params.momentum_switch {
            params.momentum_initial
        } else {
            params.momentum_final
        };

        let (num, z) = student_kernel(&y);
        if it >= params.exaggeration_iters && (it - params.exaggeration_iters).is_multiple_of(KL_EVERY) {
            kl_history.push((it, kl_divergence(&p, &num, z)));
        }

        let grad_rows: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    if j == i {
                        continue;
                    }
                    let w = (exaggeration * p[[i, j]] - num[[i, j]] / z) * num[[i, j]];
                    g[0] += w * (y[[i, 0]] - y[[j, 0]]);
                    g[1] += w * (y[[i, 1]] - y[[j, 1]]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();

        for (i, g) in grad_rows.iter().enumerate() {
            for d in 0..2 {
                let gain = &mut gains[[i, d]];
                *gain = if (g[d] > 0.0) != (velocity[[i, d]] > 0.0) {
                    *gain + 0.2
                } else {
                    *gain * 0.8
                };
                *gain = gain.max(params.min_gain);
                velocity[[i, d]] = momentum * velocity[[i, d]] - params.learning_rate * *gain * g[d];
                y[[i, d]] += velocity[[i, d]];
            }
        }
        for d in 0..2 {
            let mean = y.column(d).sum() / n as f64;
            y.column_mut(d).mapv_inplace(|v| v - mean);
        }
    }

    let (num, z) = student_kernel(&y);
    kl_history.push((params.iters, kl_divergence(&p, &num, z)));

    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "t-SNE diverged to non-finite coordinates".into(),
        ));
    }
    Ok(TsneResult {
        embedding: Embedding2D {
            coords: y,
            method: ProjectionMethod::Tsne(params.clone()),
        },
        kl_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs(n_per: usize, sep: f64, dim: usize, seed: u64) -> Array2<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Array2::from_shape_fn((2 * n_per, dim), |(i, d)| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z + if i >= n_per && d == 0 { sep } else { 0.0 }
        })
    }

    #[test]
    fn bisection_hits_target_perplexity() {
        let x = blobs(30, 5.0, 3, 4);
        for perp in [5.0, 20.0] {
            let (cond, entropies) = conditional_affinities(x.view(), perp);
            for (i, h) in entropies.iter().enumerate() {
                assert!((h - perp.ln()).abs() < 1e-5, "row {i}: {h}");
                assert!((cond.row(i).sum() - 1.0).abs() < 1e-12);
                assert_eq!(cond[[i, i]], 0.0);
            }
        }
    }

    #[test]
    fn rejects_bad_perplexity() {
        let x = blobs(5, 1.0, 2, 0);
        let mut p = TsneParams::with_seed(1);
        p.perplexity = 10.0;
        assert!(tsne(x.view(), &p).is_err());
        p.perplexity = 1.0;
        assert!(tsne(x.view(), &p).is_err());
        assert!(tsne(blobs(1, 0.0, 2, 0).view(), &TsneParams::default()).is_err());
    }

    #[test]
    fn small_run_separates_and_descends() {
        let x = blobs(40, 20.0, 5, 11);
        let params = TsneParams {
            perplexity: 15.0,
            iters: 400,
            ..TsneParams::with_seed(3)
        };
        let r = tsne(x.view(), &params).unwrap();
        let y = &r.embedding.coords;
        let (mut within, mut nw, mut between, mut nb) = (0.0, 0, 0.0, 0);
        for i in 0..80 {
            for j in i + 1..80 {
                let d = ((y[[i, 0]] - y[[j, 0]]).powi(2) + (y[[i, 1]] - y[[j, 1]]).powi(2)).sqrt();
                if (i < 40) == (j < 40) {
                    within += d;
                    nw += 1;
                } else {
                    between += d;
                    nb += 1;
                }
            }
        }
        assert!(within / nw as f64 <= between / nb as f64);
        assert_eq!(r.kl_history[0].0, 250);
        assert!(r.kl_history.iter().all(|(_, kl)| kl.is_finite()));
        assert!(r.final_kl() <= r.kl_history[0].1);
    }
}
