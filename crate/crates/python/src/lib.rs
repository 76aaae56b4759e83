//! Python bindings for `asc_lens_core`. Matrices cross the boundary as lists of
//! rows; infinite statistics come back as `float("inf")`.

use std::collections::BTreeMap;
use std::path::PathBuf;

use asc_lens_core::archive::{read_archive as core_read_archive, slice_role, ActivationArchive, TokenRole};
use asc_lens_core::attention::{self, Statistic};
use asc_lens_core::dataset::{self, SentenceSet, SlotVocabulary};
use asc_lens_core::fixtures::{self, FixtureSpec};
use asc_lens_core::probe::{self, ProbeConfig};
use asc_lens_core::projection::{self, TsneParams};
use asc_lens_core::{gdv as core_gdv, Error};
use ndarray::Array2;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

type Rows = Vec<Vec<f64>>;
/// `(f_stat, fdr_mean, fdr_max)`
type HeadTriple = (f64, f64, f64);

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::MissingFile(_) => PyIOError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n = rows.len();
    let d = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != d) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Array2::from_shape_vec((n, d), rows.into_iter().flatten().collect())
        .map_err(|e| PyValueError::new_err(e.to_string()))
}

fn rows(m: &Array2<f64>) -> Vec<Vec<f64>> {
    m.outer_iter().map(|r| r.to_vec()).collect()
}

fn stat(s: Statistic) -> f64 {
    if s.infinite {
        f64::INFINITY
    } else {
        s.value
    }
}

fn role(name: &str) -> PyResult<TokenRole> {
    name.parse().map_err(to_py)
}

fn json_err(e: serde_json::Error) -> PyErr {
    PyValueError::new_err(e.to_string())
}

/// Standardizes every dimension to `0.5 * (x - mean) / std`.
#[pyfunction]
fn rescale(points: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(&core_gdv::rescale(matrix(points)?.view())))
}

/// Generalized discrimination value of labeled points.
#[pyfunction]
fn gdv(points: Vec<Vec<f64>>, labels: Vec<usize>) -> PyResult<f64> {
    core_gdv::gdv_of(matrix(points)?.view(), &labels).map_err(to_py)
}

#[pyfunction]
fn pairwise_distances(points: Vec<Vec<f64>>) -> PyResult<Vec<Vec<f64>>> {
    Ok(rows(projection::pairwise_distances(matrix(points)?.view()).matrix()))
}

/// Classical MDS of the points' Euclidean distances.
#[pyfunction]
#[pyo3(signature = (points, out_dim = 2))]
fn classical_mds(points: Vec<Vec<f64>>, out_dim: usize) -> PyResult<Vec<Vec<f64>>> {
    let d = projection::pairwise_distances(matrix(points)?.view());
    let e = projection::classical_mds(&d, out_dim).map_err(to_py)?;
    Ok(rows(&e.coords))
}

/// Exact t-SNE; returns `(coords, [(iteration, kl), ...])`.
#[pyfunction]
#[pyo3(signature = (points, perplexity = 30.0, iters = 1000, seed = 0))]
fn tsne(points: Vec<Vec<f64>>, perplexity: f64, iters: usize, seed: u64) -> PyResult<(Rows, Vec<(usize, f64)>)> {
    let params = TsneParams {
        perplexity,
        iters,
        ..TsneParams::with_seed(seed)
    };
    let r = projection::tsne(matrix(points)?.view(), &params).map_err(to_py)?;
    Ok((rows(&r.embedding.coords), r.kl_history))
}

/// Cross-validated linear probe over labels 0..3.
#[pyfunction]
#[pyo3(signature = (features, labels, folds = 5, seed = 0, lam = 1e-4, epochs = 20))]
fn train_probe(
    py: Python<'_>,
    features: Vec<Vec<f64>>,
    labels: Vec<usize>,
    folds: usize,
    seed: u64,
    lam: f64,
    epochs: usize,
) -> PyResult<Py<PyAny>> {
    let config = ProbeConfig {
        folds,
        lambda: lam,
        epochs,
        seed,
    };
    let s = probe::train_probe(matrix(features)?.view(), &labels, &config).map_err(to_py)?;
    let d = pyo3::types::PyDict::new(py);
    d.set_item("mean_accuracy", s.mean_accuracy)?;
    d.set_item("std_accuracy", s.std_accuracy)?;
    d.set_item("fold_accuracies", s.fold_accuracies)?;
    d.set_item("confusion", s.confusion.iter().map(|r| r.to_vec()).collect::<Vec<_>>())?;
    Ok(d.into_any().unbind())
}

#[pyfunction]
fn anova_f(groups: Vec<Vec<f64>>) -> PyResult<f64> {
    let g: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
    attention::anova_f(&g).map(stat).map_err(to_py)
}

#[pyfunction]
fn fdr_two_class(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    attention::fdr_two_class(&a, &b).map(stat).map_err(to_py)
}

/// Pairwise FDR summary; returns `(mean, max)`.
#[pyfunction]
fn fdr_multiclass(groups: Vec<Vec<f64>>) -> PyResult<(f64, f64)> {
    let g: Vec<&[f64]> = groups.iter().map(Vec::as_slice).collect();
    let r = attention::fdr_multiclass(&g).map_err(to_py)?;
    Ok((stat(r.mean), stat(r.max)))
}

/// Sentence-set JSON with `per_class` sentences per construction.
#[pyfunction]
#[pyo3(signature = (per_class, seed = 0, vocab_json = None))]
fn generate_dataset(per_class: usize, seed: u64, vocab_json: Option<&str>) -> PyResult<String> {
    let vocab = match vocab_json {
        Some(s) => {
            let v: SlotVocabulary = serde_json::from_str(s).map_err(json_err)?;
            v.validate().map_err(to_py)?;
            v
        }
        None => SlotVocabulary::default(),
    };
    Ok(dataset::generate_dataset(&vocab, per_class, seed)
        .map_err(to_py)?
        .to_json())
}

/// Validation report of a sentence-set JSON, as JSON.
#[pyfunction]
fn validate_dataset(sentences_json: &str) -> PyResult<String> {
    let set: SentenceSet = serde_json::from_str(sentences_json).map_err(json_err)?;
    serde_json::to_string(&dataset::validate_dataset(&set)).map_err(json_err)
}

/// An activation archive held in memory.
#[pyclass(name = "Archive", frozen)]
struct PyArchive {
    inner: ActivationArchive,
}

#[pymethods]
impl PyArchive {
    #[getter]
    fn model_id(&self) -> String {
        self.inner.manifest().model_id.clone()
    }

    #[getter]
    fn n_layers(&self) -> usize {
        self.inner.n_layers()
    }

    #[getter]
    fn n_heads(&self) -> usize {
        self.inner.n_heads()
    }

    #[getter]
    fn n_sentences(&self) -> usize {
        self.inner.sentences().len()
    }

    fn labels(&self) -> Vec<String> {
        self.inner.sentences().iter().map(|s| s.label.to_string()).collect()
    }

    /// `(features, labels, sentence_ids)` for the first token of `role` at `layer`.
    fn slice_role(&self, role_name: &str, layer: usize) -> PyResult<(Rows, Vec<String>, Vec<u64>)> {
        let s = slice_role(&self.inner, role(role_name)?, layer).map_err(to_py)?;
        Ok((
            rows(&s.features),
            s.labels.iter().map(|l| l.to_string()).collect(),
            s.sentence_ids,
        ))
    }

    fn write(&self, dir: PathBuf) -> PyResult<()> {
        self.inner.write(&dir).map_err(to_py)
    }

    /// `{(layer, role): gdv}`; all layers when `layers` is omitted.
    #[pyo3(signature = (roles, layers = None))]
    fn gdv_sweep(&self, roles: Vec<String>, layers: Option<Vec<usize>>) -> PyResult<BTreeMap<(usize, String), f64>> {
        let roles = roles.iter().map(|r| role(r)).collect::<PyResult<Vec<_>>>()?;
        let layers = layers.unwrap_or_else(|| (0..=self.inner.n_layers()).collect());
        let t = core_gdv::gdv_sweep(&self.inner, &roles, &layers).map_err(to_py)?;
        Ok(t.entries
            .into_iter()
            .map(|((l, r), v)| ((l, r.to_string()), v))
            .collect())
    }

    /// `{(layer, head, role): (f_stat, fdr_mean, fdr_max)}`.
    #[pyo3(signature = (roles, include_self = false))]
    fn attention_sweep(
        &self,
        roles: Vec<String>,
        include_self: bool,
    ) -> PyResult<BTreeMap<(usize, usize, String), HeadTriple>> {
        let roles = roles.iter().map(|r| role(r)).collect::<PyResult<Vec<_>>>()?;
        let s = attention::attention_sweep(&self.inner, &roles, include_self).map_err(to_py)?;
        Ok(s.entries
            .into_iter()
            .map(|((l, h, r), e)| {
                (
                    (l, h, r.to_string()),
                    (stat(e.f_stat), stat(e.fdr_mean), stat(e.fdr_max)),
                )
            })
            .collect())
    }
}

#[pyfunction]
fn read_archive(dir: PathBuf) -> PyResult<PyArchive> {
    Ok(PyArchive {
        inner: core_read_archive(&dir).map_err(to_py)?,
    })
}

/// Synthetic archive from a fixture-spec JSON string.
#[pyfunction]
fn synth_archive(spec_json: &str) -> PyResult<PyArchive> {
    let spec: FixtureSpec = serde_json::from_str(spec_json).map_err(json_err)?;
    Ok(PyArchive {
        inner: fixtures::synth_archive(&spec).map_err(to_py)?,
    })
}

#[pymodule]
fn asc_lens(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyArchive>()?;
    m.add_function(wrap_pyfunction!(rescale, m)?)?;
    m.add_function(wrap_pyfunction!(gdv, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_distances, m)?)?;
    m.add_function(wrap_pyfunction!(classical_mds, m)?)?;
    m.add_function(wrap_pyfunction!(tsne, m)?)?;
    m.add_function(wrap_pyfunction!(train_probe, m)?)?;
    m.add_function(wrap_pyfunction!(anova_f, m)?)?;
    m.add_function(wrap_pyfunction!(fdr_two_class, m)?)?;
    m.add_function(wrap_pyfunction!(fdr_multiclass, m)?)?;
    m.add_function(wrap_pyfunction!(generate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(validate_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(read_archive, m)?)?;
    m.add_function(wrap_pyfunction!(synth_archive, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}
