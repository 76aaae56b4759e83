//! Two-dimensional projections of token representations: classical
//! (Torgerson) MDS and exact t-SNE, both written from scratch.

mod eigen;
mod mds;
mod tsne;

use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::Serialize;

use crate::archive::ConstructionLabel;
use crate::error::{Error, Result};

pub use eigen::{symmetric_eigen_jacobi, top_eigenpairs, EigenPairs};
pub use mds::classical_mds;
pub use tsne::{tsne, TsneParams, TsneResult};

/// Symmetric, zero-diagonal, non-negative matrix of pairwise distances.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix(Array2<f64>);

impl DistanceMatrix {
    pub const SYMMETRY_TOL: f64 = 1e-9;

    pub fn new(m: Array2<f64>) -> Result<Self> {
        let n = m.nrows();
        if m.ncols() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                actual: m.ncols(),
            });
        }
        for i in 0..n {
            if m[[i, i]] != 0.0 {
                return Err(Error::NonZeroDiagonal(i));
            }
            for j in i + 1..n {
                let diff = (m[[i, j]] - m[[j, i]]).abs();
                if diff > Self::SYMMETRY_TOL || diff.is_nan() {
                    return Err(Error::NotSymmetric { row: i, col: j, diff });
                }
                if m[[i, j]] < 0.0 {
                    return Err(Error::InvalidParameter(format!("negative distance at ({i}, {j})")));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn len(&self) -> usize {
        self.0.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.nrows() == 0
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[[i, j]]
    }
}

/// Euclidean distances; each unordered pair is computed once and mirrored.
pub fn pairwise_distances(points: ArrayView2<f64>) -> DistanceMatrix {
    let n = points.nrows();
    let mut d = Array2::zeros((n, n));
    for i in 0..n {
        for j in i + 1..n {
            let v = points
                .row(i)
                .iter()
                .zip(points.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            d[[i, j]] = v;
            d[[j, i]] = v;
        }
    }
    DistanceMatrix(d)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum ProjectionMethod {
    Mds { out_dim: usize },
    Tsne(TsneParams),
}

impl ProjectionMethod {
    pub fn name(&self) -> &'static str {
        match self {
            ProjectionMethod::Mds { .. } => "mds",
            ProjectionMethod::Tsne(_) => "tsne",
        }
    }
}

/// Projected coordinates (`N x out_dim`, two columns by default) with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding2D {
    pub coords: Array2<f64>,
    pub method: ProjectionMethod,
}

impl Embedding2D {
    pub fn len(&self) -> usize {
        self.coords.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.nrows() == 0
    }

    /// CSV `sentence_id,x,y,label` with 6 decimal places.
    pub fn write_csv<W: Write>(&self, mut w: W, sentence_ids: &[u64], labels: &[ConstructionLabel]) -> Result<()> {
        if sentence_ids.len() != self.len() || labels.len() != self.len() || self.coords.ncols() < 2 {
            return Err(Error::LengthMismatch(format!(
                "{} points, {} ids, {} labels",
                self.len(),
                sentence_ids.len(),
                labels.len()
            )));
        }
        let io = |e| Error::io("<embedding csv>", e);
        writeln!(w, "sentence_id,x,y,label").map_err(io)?;
        for (i, (id, label)) in sentence_ids.iter().zip(labels).enumerate() {
            writeln!(w, "{id},{:.6},{:.6},{label}", self.coords[[i, 0]], self.coords[[i, 1]]).map_err(io)?;
        }
        Ok(())
    }
}

/// Rows of an embedding CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRows {
    pub sentence_ids: Vec<u64>,
    pub coords: Array2<f64>,
    pub labels: Vec<ConstructionLabel>,
}

pub fn load_embedding_csv(path: &Path) -> Result<EmbeddingRows> {
    let csv_err = |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
    let (mut ids, mut xy, mut labels) = (Vec::new(), Vec::new(), Vec::new());
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let bad = || Error::InvalidParameter(format!("bad row in {}: {rec:?}", path.display()));
        ids.push(rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?);
        xy.push(rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?);
        xy.push(rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?);
        labels.push(rec.get(3).ok_or_else(bad)?.parse()?);
    }
    let coords = Array2::from_shape_vec((ids.len(), 2), xy).expect("two columns per row");
    Ok(EmbeddingRows {
        sentence_ids: ids,
        coords,
        labels,
    })
}
