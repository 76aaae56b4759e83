//! Generalized Discrimination Value.
//!
//! Each dimension is z-scored (population standard deviation) and halved, then
//!
//! ```text
//! GDV = 1/sqrt(D) * ( mean_l intra(C_l) - mean_{l<m} inter(C_l, C_m) )
//! ```
//!
//! where `intra` averages Euclidean distances over unordered within-class pairs
//! and `inter` over all cross-class pairs. Zero means fully overlapping classes;
//! more negative means better separated.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;

use crate::archive::{slice_role, ActivationArchive, TokenRole};
use crate::error::{Error, Result};

/// Points with class assignments. Classes are identified by arbitrary ids and
/// ordered by id.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledPointCloud {
    points: Array2<f64>,
    labels: Vec<usize>,
    classes: Vec<usize>,
}

impl LabeledPointCloud {
    pub fn new(points: Array2<f64>, labels: Vec<usize>) -> Result<Self> {
        if points.nrows() != labels.len() {
            return Err(Error::LengthMismatch(format!(
                "{} points but {} labels",
                points.nrows(),
                labels.len()
            )));
        }
        if points.ncols() == 0 {
            return Err(Error::InvalidParameter("points have zero dimensions".into()));
        }
        let mut classes = labels.clone();
        classes.sort_unstable();
        classes.dedup();
        if classes.len() < 2 {
            return Err(Error::TooFewClasses {
                found: classes.len(),
                required: 2,
            });
        }
        Ok(Self {
            points,
            labels,
            classes,
        })
    }

    pub fn points(&self) -> &Array2<f64> {
        &self.points
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    fn members(&self, class: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, &l)| l == class)
            .map(|(i, _)| i)
            .collect()
    }

    fn rescaled(&self) -> Self {
        Self {
            points: rescale(self.points.view()),
            labels: self.labels.clone(),
            classes: self.classes.clone(),
        }
    }
}

/// Per-dimension z-score times one half. Constant dimensions map to 0.
pub fn rescale(points: ArrayView2<f64>) -> Array2<f64> {
    let n = points.nrows() as f64;
    let mut out = points.to_owned();
    for mut col in out.axis_iter_mut(Axis(1)) {
        let mean = col.sum() / n;
        let var = col.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        if sd > 0.0 {
            col.mapv_inplace(|x| 0.5 * (x - mean) / sd);
        } else {
            col.fill(0.0);
        }
    }
    out
}

fn distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean distance over unordered pairs within each class, in class order.
/// Operates on the points as given (callers rescale first).
pub fn mean_intra(cloud: &LabeledPointCloud) -> Result<Vec<f64>> {
    cloud
        .classes
        .iter()
        .map(|&c| {
            let idx = cloud.members(c);
            let n = idx.len();
            if n < 2 {
                return Err(Error::ClassTooSmall { class: c, size: n });
            }
            let row_sums: Vec<f64> = (0..n - 1)
                .into_par_iter()
                .map(|a| {
                    let pa = cloud.points.row(idx[a]);
                    idx[a + 1..]
                        .iter()
                        .map(|&j| distance(pa, cloud.points.row(j)))
                        .sum::<f64>()
                })
                .collect();
            let pairs = (n * (n - 1) / 2) as f64;
            Ok(row_sums.iter().sum::<f64>() / pairs)
        })
        .collect()
}

/// Mean cross-class distance for one class pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InterClassDistance {
    pub class_a: usize,
    pub class_b: usize,
    pub mean: f64,
}

/// Mean distance over all cross pairs for every class pair `a < b`.
pub fn mean_inter(cloud: &LabeledPointCloud) -> Vec<InterClassDistance> {
    let members: Vec<Vec<usize>> = cloud.classes.iter().map(|&c| cloud.members(c)).collect();
    let mut out = Vec::new();
    for a in 0..members.len() {
        for b in a + 1..members.len() {
            let (ia, ib) = (&members[a], &members[b]);
            let row_sums: Vec<f64> = ia
                .par_iter()
                .map(|&i| {
                    let pi = cloud.points.row(i);
                    ib.iter().map(|&j| distance(pi, cloud.points.row(j))).sum::<f64>()
                })
                .collect();
            out.push(InterClassDistance {
                class_a: cloud.classes[a],
                class_b: cloud.classes[b],
                mean: row_sums.iter().sum::<f64>() / (ia.len() * ib.len()) as f64,
            });
        }
    }
    out
}

/// GDV of the cloud; rescaling is applied internally.
pub fn gdv(cloud: &LabeledPointCloud) -> Result<f64> {
    let s = cloud.rescaled();
    let intra = mean_intra(&s)?;
    let inter = mean_inter(&s);
    let l = intra.len() as f64;
    let intra_mean = intra.iter().sum::<f64>() / l;
    let inter_mean = inter.iter().map(|d| d.mean).sum::<f64>() * 2.0 / (l * (l - 1.0));
    Ok((intra_mean - inter_mean) / (cloud.dim() as f64).sqrt())
}

/// Convenience wrapper over raw points and class ids.
pub fn gdv_of(points: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    gdv(&LabeledPointCloud::new(points.to_owned(), labels.to_vec())?)
}

/// GDV per (layer, role).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GdvTable {
    pub entries: BTreeMap<(usize, TokenRole), f64>,
}

impl GdvTable {
    pub fn get(&self, layer: usize, role: TokenRole) -> Option<f64> {
        self.entries.get(&(layer, role)).copied()
    }

    /// Values of one role ordered by layer.
    pub fn series(&self, role: TokenRole) -> Vec<(usize, f64)> {
        self.entries
            .iter()
            .filter(|((_, r), _)| *r == role)
            .map(|(&(l, _), &v)| (l, v))
            .collect()
    }

    /// CSV `layer,role,gdv`, layers ascending then roles in enum order.
    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "layer,role,gdv")?;
        for (&(layer, role), v) in &self.entries {
            writeln!(w, "{layer},{role},{v:.6}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).map_err(|e| Error::io(path, e))?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_path(path).map_err(|source| Error::Csv {
            path: path.to_path_buf(),
            source,
        })?;
        let mut entries = BTreeMap::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|source| Error::Csv {
                path: path.to_path_buf(),
                source,
            })?;
            let bad = || Error::InvalidParameter(format!("bad row in {}: {rec:?}", path.display()));
            let layer: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let role: TokenRole = rec.get(1).ok_or_else(bad)?.parse()?;
            let v: f64 = rec.get(2).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            entries.insert((layer, role), v);
        }
        Ok(Self { entries })
    }
}

/// One GDV per (layer, role) over the construction labels.
pub fn gdv_sweep(archive: &ActivationArchive, roles: &[TokenRole], layers: &[usize]) -> Result<GdvTable> {
    let cells: Vec<(usize, TokenRole)> = layers
        .iter()
        .flat_map(|&l| roles.iter().map(move |&r| (l, r)))
        .collect();
    let values = cells
        .par_iter()
        .map(|&(layer, role)| {
            let slice = slice_role(archive, role, layer)?;
            gdv_of(slice.features.view(), &slice.class_indices())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(GdvTable {
        entries: cells.into_iter().zip(values).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn column(v: &[f64]) -> Array2<f64> {
        Array2::from_shape_vec((v.len(), 1), v.to_vec()).unwrap()
    }

    // Hand evaluation: mean 2.5, population sd sqrt(4.25).
    fn oracle_rescale(x: f64) -> f64 {
        0.5 * (x - 2.5) / 4.25f64.sqrt()
    }

    #[test]
    fn rescale_hand_values() {
        let s = rescale(column(&[0.0, 1.0, 4.0, 5.0]).view());
        let expect = [-0.6063, -0.3638, 0.3638, 0.6063];
        for (i, e) in expect.iter().enumerate() {
            assert_abs_diff_eq!(s[[i, 0]], *e, epsilon = 1e-3);
            assert_abs_diff_eq!(s[[i, 0]], oracle_rescale([0.0, 1.0, 4.0, 5.0][i]), epsilon = 1e-12);
        }
    }

    #[test]
    fn rescale_constant_column_is_zero() {
        let s = rescale(column(&[3.0, 3.0, 3.0]).view());
        assert!(s.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn rescale_fixed_point() {
        let s = rescale(column(&[0.0, 1.0, 4.0, 5.0, -2.0]).view());
        let again = rescale(s.view());
        for (a, b) in s.iter().zip(again.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn intra_and_inter_hand_values() {
        let cloud = LabeledPointCloud::new(rescale(column(&[0.0, 1.0, 4.0, 5.0]).view()), vec![0, 0, 1, 1]).unwrap();
        let intra = mean_intra(&cloud).unwrap();
        let pair = oracle_rescale(1.0) - oracle_rescale(0.0);
        assert_abs_diff_eq!(intra[0], 0.2425, epsilon = 1e-3);
        assert_abs_diff_eq!(intra[0], pair, epsilon = 1e-12);
        let inter = mean_inter(&cloud);
        let cross: f64 = [0.0, 1.0]
            .iter()
            .flat_map(|&a| [4.0, 5.0].map(move |b| oracle_rescale(b) - oracle_rescale(a)))
            .sum::<f64>()
            / 4.0;
        assert_eq!(inter.len(), 1);
        assert_abs_diff_eq!(inter[0].mean, 0.9701, epsilon = 1e-3);
        assert_abs_diff_eq!(inter[0].mean, cross, epsilon = 1e-12);
    }

    #[test]
    fn intra_of_identical_points_is_zero() {
        let cloud = LabeledPointCloud::new(column(&[2.0, 2.0, 2.0, 5.0, 6.0]), vec![0, 0, 0, 1, 1]).unwrap();
        assert_eq!(mean_intra(&cloud).unwrap()[0], 0.0);
    }

    #[test]
    fn intra_of_collinear_triple() {
        let t = 0.75;
        let cloud = LabeledPointCloud::new(column(&[0.0, t, 2.0 * t, 9.0, 10.0]), vec![0, 0, 0, 1, 1]).unwrap();
        // pairs {t, t, 2t}
        assert_abs_diff_eq!(mean_intra(&cloud).unwrap()[0], 4.0 * t / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn singleton_class_is_rejected() {
        let cloud = LabeledPointCloud::new(column(&[0.0, 1.0, 2.0]), vec![0, 0, 1]).unwrap();
        assert!(matches!(
            mean_intra(&cloud),
            Err(Error::ClassTooSmall { class: 1, size: 1 })
        ));
        assert!(gdv(&cloud).is_err());
    }

    #[test]
    fn inter_of_coincident_classes_is_zero() {
        let cloud =
            LabeledPointCloud::new(array![[1.0, 2.0], [1.0, 2.0], [1.0, 2.0], [1.0, 2.0]], vec![0, 0, 1, 1]).unwrap();
        assert_eq!(mean_inter(&cloud)[0].mean, 0.0);
    }

    #[test]
    fn gdv_hand_value() {
        let g = gdv_of(column(&[0.0, 1.0, 4.0, 5.0]).view(), &[0, 0, 1, 1]).unwrap();
        let intra = oracle_rescale(1.0) - oracle_rescale(0.0);
        let inter = (oracle_rescale(4.0) + oracle_rescale(5.0)) - (oracle_rescale(0.0) + oracle_rescale(1.0));
        let oracle = intra - inter / 2.0;
        assert_abs_diff_eq!(g, -0.7276, epsilon = 1e-3);
        assert_abs_diff_eq!(g, oracle, epsilon = 1e-12);
    }

    #[test]
    fn gdv_of_identical_points_is_zero() {
        let pts = Array2::from_elem((6, 3), 1.5);
        assert_eq!(gdv_of(pts.view(), &[0, 0, 1, 1, 2, 2]).unwrap(), 0.0);
    }

    #[test]
    fn table_csv_format() {
        let mut t = GdvTable::default();
        t.entries.insert((1, TokenRole::Obj), -0.25);
        t.entries.insert((0, TokenRole::Verb), -0.1234567);
        t.entries.insert((0, TokenRole::Cls), 0.0);
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "layer,role,gdv\n0,CLS,0.000000\n0,VERB,-0.123457\n1,OBJ,-0.250000\n"
        );
    }
}
