//! Attention mass per token role and its discriminability across constructions.
//!
//! The feature for a (layer, head, role) cell is, per sentence, the total
//! attention the role's token receives from the other valid tokens. Across the
//! construction groups we report the one-way ANOVA F statistic and Fisher
//! discriminant ratios `(m1 - m2)^2 / (v1 + v2)` over all class pairs.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::archive::{ActivationArchive, ConstructionLabel, TokenRole};
use crate::error::{Error, Result};

/// A non-negative statistic that may be infinite (zero within-class spread with
/// a non-zero between-class difference). An infinite value stores `f64::MAX`
/// and sets the flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Statistic {
    pub value: f64,
    pub infinite: bool,
}

impl Statistic {
    pub const ZERO: Statistic = Statistic {
        value: 0.0,
        infinite: false,
    };
    pub const INFINITE: Statistic = Statistic {
        value: f64::MAX,
        infinite: true,
    };

    pub fn finite(value: f64) -> Self {
        Self { value, infinite: false }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "inf" => Some(Self::INFINITE),
            _ => s.parse().ok().map(Self::finite),
        }
    }
}

impl fmt::Display for Statistic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.infinite {
            f.write_str("inf")
        } else {
            write!(f, "{:.6}", self.value)
        }
    }
}

/// Attention masses of one (layer, head, role) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MassSample {
    pub values: Vec<f64>,
    pub labels: Vec<ConstructionLabel>,
    pub sentence_ids: Vec<u64>,
    /// Sentences lacking the role.
    pub skipped: Vec<u64>,
}

impl MassSample {
    /// Values split by construction, in label order; absent constructions omitted.
    pub fn groups(&self) -> Vec<(ConstructionLabel, Vec<f64>)> {
        ConstructionLabel::ALL
            .into_iter()
            .filter_map(|label| {
                let g: Vec<f64> = self
                    .values
                    .iter()
                    .zip(&self.labels)
                    .filter(|(_, &l)| l == label)
                    .map(|(&v, _)| v)
                    .collect();
                (!g.is_empty()).then_some((label, g))
            })
            .collect()
    }
}

/// Sum of `A[s, head, i, j]` over valid source positions `i` for the role's
/// (first) position `j`; `i = j` is excluded unless `include_self`.
pub fn attention_mass(
    archive: &ActivationArchive,
    layer: usize,
    head: usize,
    role: TokenRole,
    include_self: bool,
) -> Result<MassSample> {
    let att = archive.attention(layer)?;
    if head >= archive.n_heads() {
        return Err(Error::HeadOutOfRange {
            head,
            n_heads: archive.n_heads(),
        });
    }
    let mut out = MassSample {
        values: Vec::new(),
        labels: Vec::new(),
        sentence_ids: Vec::new(),
        skipped: Vec::new(),
    };
    for (s, sent) in archive.sentences().iter().enumerate() {
        let Some(j) = sent.position_of(role) else {
            out.skipped.push(sent.id);
            continue;
        };
        let mass: f64 = (0..sent.valid_len())
            .filter(|&i| include_self || i != j)
            .map(|i| f64::from(att[[s, head, i, j]]))
            .sum();
        out.values.push(mass);
        out.labels.push(sent.label);
        out.sentence_ids.push(sent.id);
    }
    if out.values.is_empty() {
        return Err(Error::EmptySelection(role));
    }
    Ok(out)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population variance.
fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64
}

/// One-way ANOVA F. Zero within-group spread yields the infinite sentinel when
/// group means differ and 0 when they coincide.
pub fn anova_f(groups: &[&[f64]]) -> Result<Statistic> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::TooFewClasses { found: k, required: 2 });
    }
    if let Some((g, x)) = groups.iter().enumerate().find(|(_, g)| g.len() < 2) {
        return Err(Error::GroupTooSmall {
            group: g,
            size: x.len(),
            required: 2,
        });
    }
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let means: Vec<f64> = groups.iter().map(|g| mean(g)).collect();
    let ss_within: f64 = groups
        .iter()
        .zip(&means)
        .map(|(g, m)| g.iter().map(|x| (x - m) * (x - m)).sum::<f64>())
        .sum();
    let ss_between = if means.iter().all(|&m| m == means[0]) {
        0.0
    } else {
        let grand = groups.iter().map(|g| g.iter().sum::<f64>()).sum::<f64>() / n as f64;
        groups
            .iter()
            .zip(&means)
            .map(|(g, m)| g.len() as f64 * (m - grand) * (m - grand))
            .sum()
    };
    if ss_within == 0.0 {
        return Ok(if ss_between == 0.0 {
            Statistic::ZERO
        } else {
            Statistic::INFINITE
        });
    }
    let f = (ss_between / (k - 1) as f64) / (ss_within / (n - k) as f64);
    Ok(Statistic::finite(f))
}

/// Two-class Fisher discriminant ratio with population variances.
pub fn fdr_two_class(a: &[f64], b: &[f64]) -> Result<Statistic> {
    for (g, x) in [a, b].iter().enumerate() {
        if x.is_empty() {
            return Err(Error::GroupTooSmall {
                group: g,
                size: 0,
                required: 1,
            });
        }
    }
    let (ma, mb) = (mean(a), mean(b));
    let num = if ma == mb { 0.0 } else { (ma - mb) * (ma - mb) };
    let den = variance(a) + variance(b);
    Ok(if den == 0.0 {
        if num == 0.0 {
            Statistic::ZERO
        } else {
            Statistic::INFINITE
        }
    } else {
        Statistic::finite(num / den)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MulticlassFdr {
    /// Mean over the finite pairs; infinite only when every pair is infinite.
    pub mean: Statistic,
    pub max: Statistic,
    /// Group index pairs whose FDR was infinite (left out of `mean`).
    pub infinite_pairs: Vec<(usize, usize)>,
}

/// FDR over every unordered group pair, summarized by mean and max.
pub fn fdr_multiclass(groups: &[&[f64]]) -> Result<MulticlassFdr> {
    if groups.len() < 2 {
        return Err(Error::TooFewClasses {
            found: groups.len(),
            required: 2,
        });
    }
    let mut finite = Vec::new();
    let mut infinite_pairs = Vec::new();
    for a in 0..groups.len() {
        for b in a + 1..groups.len() {
            let s = fdr_two_class(groups[a], groups[b])?;
            if s.infinite {
                infinite_pairs.push((a, b));
            } else {
                finite.push(s.value);
            }
        }
    }
    let mean = if finite.is_empty() {
        Statistic::INFINITE
    } else {
        Statistic::finite(finite.iter().sum::<f64>() / finite.len() as f64)
    };
    let max = if infinite_pairs.is_empty() {
        Statistic::finite(finite.iter().copied().fold(0.0, f64::max))
    } else {
        Statistic::INFINITE
    };
    Ok(MulticlassFdr {
        mean,
        max,
        infinite_pairs,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeadStats {
    pub f_stat: Statistic,
    pub fdr_mean: Statistic,
    pub fdr_max: Statistic,
    pub groups: Vec<ConstructionLabel>,
    pub group_means: Vec<f64>,
    pub group_vars: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttentionStats {
    pub entries: BTreeMap<(usize, usize, TokenRole), HeadStats>,
    /// Mean of the finite per-head `fdr_mean` values per (layer, role).
    pub head_mean: BTreeMap<(usize, TokenRole), f64>,
}

impl AttentionStats {
    pub fn roles(&self) -> Vec<TokenRole> {
        let mut r: Vec<TokenRole> = self.head_mean.keys().map(|&(_, r)| r).collect();
        r.sort();
        r.dedup();
        r
    }

    fn recompute_head_mean(&mut self) {
        let mut acc: BTreeMap<(usize, TokenRole), (f64, usize)> = BTreeMap::new();
        for (&(layer, _, role), s) in &self.entries {
            let e = acc.entry((layer, role)).or_default();
            if !s.fdr_mean.infinite {
                e.0 += s.fdr_mean.value;
                e.1 += 1;
            }
        }
        self.head_mean = acc
            .into_iter()
            .map(|(k, (sum, n))| (k, if n > 0 { sum / n as f64 } else { 0.0 }))
            .collect();
    }

    /// CSV `layer,head,role,f_stat,fdr_mean,fdr_max`; infinite values print `inf`.
    pub fn write_stats_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "layer,head,role,f_stat,fdr_mean,fdr_max")?;
        for (&(layer, head, role), s) in &self.entries {
            writeln!(w, "{layer},{head},{role},{},{},{}", s.f_stat, s.fdr_mean, s.fdr_max)?;
        }
        Ok(())
    }

    /// CSV `layer,role,fdr_head_mean`.
    pub fn write_head_mean_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "layer,role,fdr_head_mean")?;
        for (&(layer, role), v) in &self.head_mean {
            writeln!(w, "{layer},{role},{v:.6}")?;
        }
        Ok(())
    }

    /// Reads a stats CSV written by [`AttentionStats::write_stats_csv`]. Group
    /// summaries are not part of the CSV and come back empty.
    pub fn load_stats_csv(path: &Path) -> Result<Self> {
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
        let mut stats = AttentionStats::default();
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let bad = || Error::InvalidParameter(format!("bad row in {}: {rec:?}", path.display()));
            let layer: usize = rec.get(0).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let head: usize = rec.get(1).and_then(|s| s.parse().ok()).ok_or_else(bad)?;
            let role: TokenRole = rec.get(2).ok_or_else(bad)?.parse()?;
            let stat = |i| rec.get(i).and_then(Statistic::parse).ok_or_else(bad);
            stats.entries.insert(
                (layer, head, role),
                HeadStats {
                    f_stat: stat(3)?,
                    fdr_mean: stat(4)?,
                    fdr_max: stat(5)?,
                    groups: Vec::new(),
                    group_means: Vec::new(),
                    group_vars: Vec::new(),
                },
            );
        }
        stats.recompute_head_mean();
        Ok(stats)
    }
}

fn head_stats(sample: &MassSample) -> Result<HeadStats> {
    let groups = sample.groups();
    let slices: Vec<&[f64]> = groups.iter().map(|(_, g)| g.as_slice()).collect();
    let f_stat = anova_f(&slices)?;
    let fdr = fdr_multiclass(&slices)?;
    Ok(HeadStats {
        f_stat,
        fdr_mean: fdr.mean,
        fdr_max: fdr.max,
        groups: groups.iter().map(|(l, _)| *l).collect(),
        group_means: slices.iter().map(|g| mean(g)).collect(),
        group_vars: slices.iter().map(|g| variance(g)).collect(),
    })
}

/// F and FDR for every (layer, head, role) over all attention layers.
pub fn attention_sweep(archive: &ActivationArchive, roles: &[TokenRole], include_self: bool) -> Result<AttentionStats> {
    let cells: Vec<(usize, usize, TokenRole)> = (1..=archive.n_layers())
        .flat_map(|l| (0..archive.n_heads()).flat_map(move |h| roles.iter().map(move |&r| (l, h, r))))
        .collect();
    let computed = cells
        .par_iter()
        .map(|&(layer, head, role)| {
            let sample = attention_mass(archive, layer, head, role, include_self)?;
            head_stats(&sample)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut stats = AttentionStats {
        entries: cells.into_iter().zip(computed).collect(),
        head_mean: BTreeMap::new(),
    };
    stats.recompute_head_mean();
    Ok(stats)
}
