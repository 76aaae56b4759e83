//! Four-class linear probes: one-vs-rest linear SVMs trained with Pegasos
//! (stochastic subgradient descent on the L2-regularized hinge loss), evaluated
//! by stratified k-fold cross-validation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::archive::{slice_role, ActivationArchive, ConstructionLabel, TokenRole};
use crate::error::{Error, Result};

pub const N_CLASSES: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeConfig {
    pub folds: usize,
    pub lambda: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            lambda: 1e-4,
            epochs: 20,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }
}

/// Per-class linear heads over standardized features.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbeModel {
    /// `N_CLASSES x D`.
    pub weights: Array2<f64>,
    pub bias: [f64; N_CLASSES],
    pub feature_mean: Array1<f64>,
    /// Population standard deviation; zero-variance features are scaled by 1.
    pub feature_std: Array1<f64>,
}

impl LinearProbeModel {
    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    fn scores(&self, x: ArrayView1<f64>) -> [f64; N_CLASSES] {
        let z = (&x - &self.feature_mean) / &self.feature_std;
        let mut s = self.bias;
        for (c, sc) in s.iter_mut().enumerate() {
            *sc += self.weights.row(c).dot(&z);
        }
        s
    }
}

fn argmax_lowest(scores: &[f64; N_CLASSES]) -> usize {
    let mut best = 0;
    for c in 1..N_CLASSES {
        if scores[c] > scores[best] {
            best = c;
        }
    }
    best
}

/// Argmax over class scores after standardization; ties go to the lowest class.
pub fn predict(model: &LinearProbeModel, features: ArrayView2<f64>) -> Result<Vec<usize>> {
    if features.ncols() != model.dim() {
        return Err(Error::DimensionMismatch {
            expected: model.dim(),
            actual: features.ncols(),
        });
    }
    Ok(features
        .rows()
        .into_iter()
        .map(|row| argmax_lowest(&model.scores(row)))
        .collect())
}

fn standardization(x: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let n = x.nrows() as f64;
    let mean = x.sum_axis(Axis(0)) / n;
    let mut std = Array1::zeros(x.ncols());
    for (d, col) in x.axis_iter(Axis(1)).enumerate() {
        let var = col.iter().map(|v| (v - mean[d]).powi(2)).sum::<f64>() / n;
        std[d] = if var > 0.0 { var.sqrt() } else { 1.0 };
    }
    (mean, std)
}

/// Fits the four one-vs-rest heads with Pegasos.
///
/// The bias is an extra weight on a constant unit feature. Step size is
/// `1 / (lambda * t)` with `t` counting updates across epochs; after every step
/// the augmented weight vector is projected onto the ball of radius
/// `1 / sqrt(lambda)`. Sample order per epoch comes from `rng`, shared by all heads.
pub fn fit(
    features: ArrayView2<f64>,
    labels: &[usize],
    lambda: f64,
    epochs: usize,
    rng: &mut ChaCha8Rng,
) -> Result<LinearProbeModel> {
    let (n, d) = features.dim();
    if d == 0 {
        return Err(Error::InvalidParameter("features have zero dimensions".into()));
    }
    if n != labels.len() {
        return Err(Error::LengthMismatch(format!("{n} rows but {} labels", labels.len())));
    }
    if lambda.is_nan() || lambda <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "lambda must be positive, got {lambda}"
        )));
    }

    let (mean, std) = standardization(features);
    let mut z = features.to_owned();
    for mut row in z.rows_mut() {
        row -= &mean;
        row /= &std;
    }

    let mut order: Vec<usize> = (0..n).collect();
    let orders: Vec<Vec<usize>> = (0..epochs)
        .map(|_| {
            order.shuffle(rng);
            order.clone()
        })
        .collect();

    let radius = 1.0 / lambda.sqrt();
    let mut weights = Array2::zeros((N_CLASSES, d));
    let mut bias = [0.0; N_CLASSES];
    for (c, b) in bias.iter_mut().enumerate() {
        // augmented weight: w[..d] features, w[d] bias
        let mut w = vec![0.0; d + 1];
        let mut t = 0usize;
        for epoch_order in &orders {
            for &i in epoch_order {
                t += 1;
                let eta = 1.0 / (lambda * t as f64);
                let x = z.row(i);
                let y = if labels[i] == c { 1.0 } else { -1.0 };
                let margin = y * (x.iter().zip(&w[..d]).map(|(a, b)| a * b).sum::<f64>() + w[d]);
                let shrink = 1.0 - eta * lambda;
                w.iter_mut().for_each(|v| *v *= shrink);
                if margin < 1.0 {
                    for (wk, xk) in w[..d].iter_mut().zip(x.iter()) {
                        *wk += eta * y * xk;
                    }
                    w[d] += eta * y;
                }
                let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
                if norm > radius {
                    let s = radius / norm;
                    w.iter_mut().for_each(|v| *v *= s);
                }
            }
        }
        weights.row_mut(c).assign(&ArrayView1::from(&w[..d]));
        *b = w[d];
    }

    Ok(LinearProbeModel {
        weights,
        bias,
        feature_mean: mean,
        feature_std: std,
    })
}

/// Cross-validated scores of one probe.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeScores {
    pub fold_accuracies: Vec<f64>,
    /// Pooled held-out accuracy, `trace(confusion) / total`. Equals the plain mean
    /// of fold accuracies when folds have equal size; otherwise it is the
    /// fold-size-weighted mean.
    pub mean_accuracy: f64,
    /// Population standard deviation of the fold accuracies.
    pub std_accuracy: f64,
    /// Rows are true classes, columns predicted, summed over held-out folds.
    pub confusion: [[u64; N_CLASSES]; N_CLASSES],
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeResult {
    pub layer: usize,
    pub role: TokenRole,
    #[serde(flatten)]
    pub scores: ProbeScores,
}

/// Fold index per sample. Each class's indices are shuffled, classes are
/// concatenated in class order, and folds are dealt round-robin over the result.
pub fn stratified_folds(labels: &[usize], folds: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if folds < 2 {
        return Err(Error::InvalidParameter(format!("folds must be >= 2, got {folds}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); N_CLASSES];
    for (i, &l) in labels.iter().enumerate() {
        if l >= N_CLASSES {
            return Err(Error::Stratification(format!("label {l} out of range")));
        }
        by_class[l].push(i);
    }
    if let Some(missing) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::Stratification(format!("class {missing} has no samples")));
    }
    let mut assignment = vec![0; labels.len()];
    let mut k = 0;
    for members in by_class.iter_mut() {
        members.shuffle(rng);
        for &i in members.iter() {
            assignment[i] = k % folds;
            k += 1;
        }
    }
    Ok(assignment)
}

pub fn train_probe(features: ArrayView2<f64>, labels: &[usize], config: &ProbeConfig) -> Result<ProbeScores> {
    let n = features.nrows();
    if features.ncols() == 0 {
        return Err(Error::InvalidParameter("features have zero dimensions".into()));
    }
    if n != labels.len() {
        return Err(Error::LengthMismatch(format!("{n} rows but {} labels", labels.len())));
    }
    if n < config.folds * N_CLASSES {
        return Err(Error::InvalidParameter(format!(
            "need at least folds * 4 = {} samples, got {n}",
            config.folds * N_CLASSES
        )));
    }

    let mut split_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let assignment = stratified_folds(labels, config.folds, &mut split_rng)?;

    let per_fold = (0..config.folds)
        .map(|f| {
            let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == f).collect();
            let train_x = features.select(Axis(0), &train);
            let train_y: Vec<usize> = train.iter().map(|&i| labels[i]).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(f as u64 + 1);
            let model = fit(train_x.view(), &train_y, config.lambda, config.epochs, &mut rng)?;
            let pred = predict(&model, features.select(Axis(0), &test).view())?;
            let mut confusion = [[0u64; N_CLASSES]; N_CLASSES];
            for (&i, &p) in test.iter().zip(&pred) {
                confusion[labels[i]][p] += 1;
            }
            Ok(confusion)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut confusion = [[0u64; N_CLASSES]; N_CLASSES];
    let mut fold_accuracies = Vec::with_capacity(config.folds);
    for fc in &per_fold {
        let total: u64 = fc.iter().flatten().sum();
        let correct: u64 = (0..N_CLASSES).map(|c| fc[c][c]).sum();
        fold_accuracies.push(correct as f64 / total as f64);
        for r in 0..N_CLASSES {
            for c in 0..N_CLASSES {
                confusion[r][c] += fc[r][c];
            }
        }
    }
    let total: u64 = confusion.iter().flatten().sum();
    let trace: u64 = (0..N_CLASSES).map(|c| confusion[c][c]).sum();
    let mean_accuracy = trace as f64 / total as f64;
    let k = fold_accuracies.len() as f64;
    let plain_mean = fold_accuracies.iter().sum::<f64>() / k;
    let std_accuracy = (fold_accuracies.iter().map(|a| (a - plain_mean).powi(2)).sum::<f64>() / k).sqrt();

    Ok(ProbeScores {
        fold_accuracies,
        mean_accuracy,
        std_accuracy,
        confusion,
    })
}

/// One probe per (layer, role), cells trained in parallel.
pub fn probe_sweep(
    archive: &ActivationArchive,
    roles: &[TokenRole],
    layers: &[usize],
    config: &ProbeConfig,
) -> Result<Vec<ProbeResult>> {
    let cells: Vec<(usize, TokenRole)> = layers
        .iter()
        .flat_map(|&l| roles.iter().map(move |&r| (l, r)))
        .collect();
    cells
        .par_iter()
        .map(|&(layer, role)| {
            let slice = slice_role(archive, role, layer)?;
            let scores = train_probe(slice.features.view(), &slice.class_indices(), config)?;
            Ok(ProbeResult { layer, role, scores })
        })
        .collect()
}

fn label_name(c: usize) -> &'static str {
    ConstructionLabel::from_index(c).expect("class index < 4").as_str()
}

/// CSV `layer,role,fold,accuracy`.
pub fn write_accuracy_csv<W: Write>(results: &[ProbeResult], mut w: W) -> std::io::Result<()> {
    writeln!(w, "layer,role,fold,accuracy")?;
    for r in results {
        for (f, a) in r.scores.fold_accuracies.iter().enumerate() {
            writeln!(w, "{},{},{f},{a:.6}", r.layer, r.role)?;
        }
    }
    Ok(())
}

/// CSV `layer,role,true,pred,count`, all 16 cells per probe.
pub fn write_confusion_csv<W: Write>(results: &[ProbeResult], mut w: W) -> std::io::Result<()> {
    writeln!(w, "layer,role,true,pred,count")?;
    for r in results {
        for (t, row) in r.scores.confusion.iter().enumerate() {
            for (p, count) in row.iter().enumerate() {
                writeln!(w, "{},{},{},{},{count}", r.layer, r.role, label_name(t), label_name(p))?;
            }
        }
    }
    Ok(())
}

/// Pooled accuracy per (layer, role) recovered from a confusion CSV.
pub fn load_confusion_accuracy(path: &Path) -> Result<BTreeMap<(usize, TokenRole), f64>> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut tallies: BTreeMap<(usize, TokenRole), (u64, u64)> = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let bad = || Error::InvalidParameter(format!("bad row in {}: {rec:?}", path.display()));
        let layer: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let role: TokenRole = rec.get(1).ok_or_else(bad)?.parse()?;
        let t = rec.get(2).ok_or_else(bad)?;
        let p = rec.get(3).ok_or_else(bad)?;
        let count: u64 = rec.get(4).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let e = tallies.entry((layer, role)).or_default();
        e.1 += count;
        if t == p {
            e.0 += count;
        }
    }
    Ok(tallies
        .into_iter()
        .map(|(k, (correct, total))| (k, if total > 0 { correct as f64 / total as f64 } else { 0.0 }))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn four_blobs(n_per: usize, dim: usize, spacing: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers = [[0.0, 0.0], [spacing, 0.0], [0.0, spacing], [spacing, spacing]];
        let mut x = Array2::zeros((4 * n_per, dim));
        let mut y = Vec::new();
        for (c, center) in centers.iter().enumerate() {
            for k in 0..n_per {
                let i = c * n_per + k;
                for d in 0..dim {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x[[i, d]] = z + if d < 2 { center[d] } else { 0.0 };
                }
                y.push(c);
            }
        }
        (x, y)
    }

    #[test]
    fn separable_blobs_are_learned() {
        let (x, y) = four_blobs(100, 2, 50.0, 1);
        let r = train_probe(x.view(), &y, &ProbeConfig::with_seed(7)).unwrap();
        assert!(r.mean_accuracy >= 0.99, "{r:?}");
        let total: u64 = r.confusion.iter().flatten().sum();
        assert_eq!(total, 400);
        for c in 0..4 {
            assert_eq!(r.confusion[c].iter().sum::<u64>(), 100);
        }
    }

    #[test]
    fn confusion_trace_matches_fold_mean() {
        let (x, y) = four_blobs(25, 3, 2.0, 4);
        let r = train_probe(x.view(), &y, &ProbeConfig::with_seed(2)).unwrap();
        let trace: u64 = (0..4).map(|c| r.confusion[c][c]).sum();
        assert!((r.mean_accuracy - trace as f64 / 100.0).abs() < 1e-12);
        // 100 samples, 5 folds of 20
        let plain = r.fold_accuracies.iter().sum::<f64>() / 5.0;
        assert!((r.mean_accuracy - plain).abs() < 1e-12);
    }

    #[test]
    fn identical_features_give_chance() {
        let x = Array2::from_elem((20, 3), 1.25);
        let y: Vec<usize> = (0..20).map(|i| i % 4).collect();
        let r = train_probe(x.view(), &y, &ProbeConfig::with_seed(0)).unwrap();
        assert_eq!(r.mean_accuracy, 0.25);
        let again = train_probe(x.view(), &y, &ProbeConfig::with_seed(0)).unwrap();
        assert_eq!(r, again);
    }

    #[test]
    fn zero_model_predicts_class_zero() {
        let model = LinearProbeModel {
            weights: Array2::zeros((4, 3)),
            bias: [0.0; 4],
            feature_mean: Array1::zeros(3),
            feature_std: Array1::ones(3),
        };
        let x = Array2::from_shape_fn((5, 3), |(i, j)| (i * j) as f64);
        assert_eq!(predict(&model, x.view()).unwrap(), vec![0; 5]);
        assert!(matches!(
            predict(&model, Array2::zeros((1, 2)).view()),
            Err(Error::DimensionMismatch { expected: 3, actual: 2 })
        ));
    }

    #[test]
    fn training_fit_and_centroids() {
        let (x, y) = four_blobs(50, 2, 50.0, 9);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = fit(x.view(), &y, 1e-4, 20, &mut rng).unwrap();
        let pred = predict(&model, x.view()).unwrap();
        let acc = pred.iter().zip(&y).filter(|(a, b)| a == b).count() as f64 / y.len() as f64;
        assert!(acc >= 0.99);
        let centroids = ndarray::array![[0.0, 0.0], [50.0, 0.0], [0.0, 50.0], [50.0, 50.0]];
        assert_eq!(predict(&model, centroids.view()).unwrap(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn missing_class_and_bad_sizes() {
        let x = Array2::zeros((30, 2));
        let y: Vec<usize> = (0..30).map(|i| i % 3).collect();
        assert!(matches!(
            train_probe(x.view(), &y, &ProbeConfig::default()),
            Err(Error::Stratification(_))
        ));
        let y4: Vec<usize> = (0..12).map(|i| i % 4).collect();
        assert!(train_probe(Array2::zeros((12, 2)).view(), &y4, &ProbeConfig::default()).is_err());
        assert!(train_probe(Array2::zeros((20, 0)).view(), &y4, &ProbeConfig::default()).is_err());
    }

    #[test]
    fn feature_scaling_is_absorbed() {
        let (x, y) = four_blobs(50, 4, 6.0, 5);
        let cfg = ProbeConfig::with_seed(3);
        let a = train_probe(x.view(), &y, &cfg).unwrap();
        let b = train_probe((&x * 37.5).view(), &y, &cfg).unwrap();
        assert!((a.mean_accuracy - b.mean_accuracy).abs() < 0.02);
    }

    #[test]
    fn csv_layouts() {
        let (x, y) = four_blobs(10, 2, 50.0, 5);
        let scores = train_probe(x.view(), &y, &ProbeConfig::with_seed(3)).unwrap();
        let results = vec![ProbeResult {
            layer: 3,
            role: TokenRole::Verb,
            scores,
        }];
        let mut acc = Vec::new();
        write_accuracy_csv(&results, &mut acc).unwrap();
        let acc = String::from_utf8(acc).unwrap();
        assert!(acc.starts_with("layer,role,fold,accuracy\n3,VERB,0,"));
        assert_eq!(acc.lines().count(), 6);
        let mut conf = Vec::new();
        write_confusion_csv(&results, &mut conf).unwrap();
        let conf = String::from_utf8(conf).unwrap();
        assert_eq!(conf.lines().count(), 17);
        assert!(conf.contains("3,VERB,caused_motion,caused_motion,"));
    }
}
