//! Standalone SVG figures: projection scatter plots, per-layer line charts and
//! per-head FDR dot plots. Output bytes depend only on the inputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::archive::{ConstructionLabel, TokenRole};
use crate::attention::AttentionStats;
use crate::error::{Error, Result};
use crate::gdv::GdvTable;
use crate::probe::load_confusion_accuracy;
use crate::projection::{load_embedding_csv, Embedding2D};

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;
pub const MARGIN: f64 = 40.0;
const TICKS: usize = 5;
const DASH: &str = "6 4";

pub fn label_color(label: ConstructionLabel) -> &'static str {
    match label {
        ConstructionLabel::CausedMotion => "#1f77b4",
        ConstructionLabel::Ditransitive => "#2ca02c",
        ConstructionLabel::Transitive => "#ff7f0e",
        ConstructionLabel::Resultative => "#d62728",
    }
}

pub fn role_color(role: TokenRole) -> &'static str {
    match role {
        TokenRole::Cls => "#1f77b4",
        TokenRole::Det => "#ff7f0e",
        TokenRole::Subj => "#2ca02c",
        TokenRole::Verb => "#d62728",
        TokenRole::Obj => "#9467bd",
        TokenRole::IndObj => "#8c564b",
        TokenRole::Prep => "#e377c2",
        TokenRole::ObjPrep => "#7f7f7f",
        TokenRole::Sep => "#bcbd22",
        TokenRole::Other => "#17becf",
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Formats with at most 3 significant digits.
pub fn format_tick(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return "0".into();
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-3..6).contains(&exp) {
        return format!("{v:.2e}");
    }
    let decimals = (2 - exp).max(0) as usize;
    let factor = 10f64.powi(2 - exp);
    let rounded = (v * factor).round() / factor;
    let s = format!("{rounded:.decimals$}");
    let s = if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    };
    if s == "-0" {
        "0".into()
    } else {
        s
    }
}

#[derive(Debug, Clone, Copy)]
struct Range {
    lo: f64,
    hi: f64,
}

impl Range {
    /// Data range padded by 5% of its span (or by 0.5 when the span is zero).
    fn padded<I: IntoIterator<Item = f64>>(values: I) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values.into_iter().filter(|v| v.is_finite()) {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if lo > hi {
            return Range { lo: 0.0, hi: 1.0 };
        }
        let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
        Range {
            lo: lo - pad,
            hi: hi + pad,
        }
    }

    fn ticks(&self) -> impl Iterator<Item = f64> + '_ {
        (0..TICKS).map(move |k| self.lo + (self.hi - self.lo) * k as f64 / (TICKS - 1) as f64)
    }
}

struct Frame {
    x: Range,
    y: Range,
}

impl Frame {
    fn px(&self, v: f64) -> f64 {
        MARGIN + (v - self.x.lo) / (self.x.hi - self.x.lo) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, v: f64) -> f64 {
        let v = v.clamp(self.y.lo, self.y.hi);
        HEIGHT - MARGIN - (v - self.y.lo) / (self.y.hi - self.y.lo) * (HEIGHT - 2.0 * MARGIN)
    }

    fn open(&self, title: &str, x_label: &str, y_label: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            r##"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif">
<rect x="0" y="0" width="{w}" height="{h}" fill="#ffffff"/>
<text x="{cx}" y="24" font-size="16" text-anchor="middle">{title}</text>"##,
            w = WIDTH,
            h = HEIGHT,
            cx = WIDTH / 2.0,
            title = escape(title)
        );
        let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
        let _ = writeln!(
            s,
            r##"<g stroke="#000000" stroke-width="1"><line x1="{x0}" y1="{y1}" x2="{x1}" y2="{y1}"/><line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}"/></g>"##
        );
        s.push_str("<g font-size=\"10\" fill=\"#333333\">\n");
        for t in self.x.ticks() {
            let px = self.px(t);
            let _ = writeln!(
                s,
                r##"<line x1="{px:.2}" y1="{y1}" x2="{px:.2}" y2="{:.2}" stroke="#000000"/><text x="{px:.2}" y="{:.2}" text-anchor="middle">{}</text>"##,
                y1 + 4.0,
                y1 + 15.0,
                format_tick(t)
            );
        }
        for t in self.y.ticks() {
            let py = self.py(t);
            let _ = writeln!(
                s,
                r##"<line x1="{:.2}" y1="{py:.2}" x2="{x0}" y2="{py:.2}" stroke="#000000"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
                x0 - 4.0,
                x0 - 5.0,
                py + 3.0,
                format_tick(t)
            );
        }
        s.push_str("</g>\n");
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 6.0,
            escape(x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="12" y="{:.2}" font-size="12" text-anchor="middle" transform="rotate(-90 12 {:.2})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(y_label)
        );
        s
    }
}

fn legend(s: &mut String, entries: &[(&str, &str)]) {
    s.push_str("<g font-size=\"11\">\n");
    for (k, (name, color)) in entries.iter().enumerate() {
        let y = MARGIN + 8.0 + 16.0 * k as f64;
        let x = WIDTH - MARGIN - 110.0;
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{:.2}" width="10" height="10" fill="{color}"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            y - 9.0,
            x + 14.0,
            y,
            escape(name)
        );
    }
    s.push_str("</g>\n");
}

/// Scatter plot of a 2-D embedding, one circle per point colored by construction.
pub fn render_scatter(embedding: &Embedding2D, labels: &[ConstructionLabel], title: &str) -> Result<String> {
    if labels.len() != embedding.len() {
        return Err(Error::LengthMismatch(format!(
            "{} points but {} labels",
            embedding.len(),
            labels.len()
        )));
    }
    if !embedding.is_empty() && embedding.coords.ncols() < 2 {
        return Err(Error::InvalidParameter("scatter needs two coordinate columns".into()));
    }
    let c = &embedding.coords;
    let frame = Frame {
        x: Range::padded((0..c.nrows()).map(|i| c[[i, 0]])),
        y: Range::padded((0..c.nrows()).map(|i| c[[i, 1]])),
    };
    let mut s = frame.open(title, "dimension 1", "dimension 2");
    s.push_str("<g fill-opacity=\"0.8\">\n");
    for (i, label) in labels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{}"/>"#,
            frame.px(c[[i, 0]]),
            frame.py(c[[i, 1]]),
            label_color(*label)
        );
    }
    s.push_str("</g>\n");
    let entries: Vec<(&str, &str)> = [
        ConstructionLabel::CausedMotion,
        ConstructionLabel::Ditransitive,
        ConstructionLabel::Transitive,
        ConstructionLabel::Resultative,
    ]
    .into_iter()
    .map(|l| (l.as_str(), label_color(l)))
    .collect();
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    Ok(s)
}

/// One polyline per role over layers.
pub fn render_line(series: &BTreeMap<TokenRole, Vec<(usize, f64)>>, y_label: &str) -> String {
    let frame = Frame {
        x: Range::padded(series.values().flatten().map(|&(l, _)| l as f64)),
        y: Range::padded(series.values().flatten().map(|&(_, v)| v)),
    };
    let mut s = frame.open(&format!("{y_label} per layer"), "layer", y_label);
    for (role, points) in series {
        if points.is_empty() {
            continue;
        }
        let mut pts = points.clone();
        pts.sort_by_key(|&(l, _)| l);
        let coords: Vec<String> = pts
            .iter()
            .map(|&(l, v)| format!("{:.2},{:.2}", frame.px(l as f64), frame.py(v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="2"/>"#,
            coords.join(" "),
            role_color(*role)
        );
    }
    let entries: Vec<(&str, &str)> = series.keys().map(|r| (r.as_str(), role_color(*r))).collect();
    legend(&mut s, &entries);
    s.push_str("</svg>\n");
    s
}

/// Per-head FDR dots per layer with a dashed segment at the mean over heads.
/// Infinite values are drawn at the top of the axis.
pub fn render_fdr_dots(stats: &AttentionStats, role: TokenRole) -> Result<String> {
    let dots: Vec<(usize, f64, bool)> = stats
        .entries
        .iter()
        .filter(|((_, _, r), _)| *r == role)
        .map(|(&(l, _, _), h)| (l, h.fdr_mean.value, h.fdr_mean.infinite))
        .collect();
    if dots.is_empty() {
        return Err(Error::MissingRole(role));
    }
    let means: Vec<(usize, f64)> = stats
        .head_mean
        .iter()
        .filter(|((_, r), _)| *r == role)
        .map(|(&(l, _), &v)| (l, v))
        .collect();

    let y_max = dots
        .iter()
        .filter(|d| !d.2)
        .map(|d| d.1)
        .chain(means.iter().map(|m| m.1))
        .fold(0.0f64, f64::max);
    let frame = Frame {
        x: Range::padded(dots.iter().map(|d| d.0 as f64)),
        y: Range {
            lo: 0.0,
            hi: if y_max > 0.0 { y_max * 1.05 } else { 1.0 },
        },
    };
    let mut s = frame.open(&format!("attention FDR per head, {role}"), "layer", "FDR");
    s.push_str("<g fill=\"#1f77b4\" fill-opacity=\"0.7\">\n");
    for &(l, v, inf) in &dots {
        let y = if inf { frame.y.hi } else { v };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#,
            frame.px(l as f64),
            frame.py(y)
        );
    }
    s.push_str("</g>\n");
    let half = (WIDTH - 2.0 * MARGIN) / (frame.x.hi - frame.x.lo) * 0.35;
    for &(l, v) in &means {
        let (cx, cy) = (frame.px(l as f64), frame.py(v));
        let _ = writeln!(
            s,
            r##"<line x1="{:.2}" y1="{cy:.2}" x2="{:.2}" y2="{cy:.2}" stroke="#d62728" stroke-width="2" stroke-dasharray="{DASH}"/>"##,
            cx - half,
            cx + half
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn write_svg(path: &Path, svg: &str) -> Result<()> {
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

fn series_by_role(values: &BTreeMap<(usize, TokenRole), f64>) -> BTreeMap<TokenRole, Vec<(usize, f64)>> {
    let mut out: BTreeMap<TokenRole, Vec<(usize, f64)>> = BTreeMap::new();
    for (&(l, r), &v) in values {
        out.entry(r).or_default().push((l, v));
    }
    out
}

pub const GDV_CSV: &str = "gdv.csv";
pub const PROBE_ACCURACY_CSV: &str = "probe_accuracy.csv";
pub const PROBE_CONFUSION_CSV: &str = "probe_confusion.csv";
pub const ATTENTION_STATS_CSV: &str = "attention_stats.csv";
pub const ATTENTION_HEAD_MEAN_CSV: &str = "attention_fdr_head_mean.csv";

/// Renders every figure whose source CSV exists in `input` into `output`.
/// Returns the written paths in order.
pub fn render_directory(input: &Path, output: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(output).map_err(|e| Error::io(output, e))?;
    let mut written = Vec::new();

    let gdv_path = input.join(GDV_CSV);
    if gdv_path.is_file() {
        let table = GdvTable::load(&gdv_path)?;
        let p = output.join("gdv.svg");
        write_svg(&p, &render_line(&series_by_role(&table.entries), "GDV"))?;
        written.push(p);
    }

    let conf_path = input.join(PROBE_CONFUSION_CSV);
    if conf_path.is_file() {
        let acc = load_confusion_accuracy(&conf_path)?;
        let p = output.join("probe_accuracy.svg");
        write_svg(&p, &render_line(&series_by_role(&acc), "probe accuracy"))?;
        written.push(p);
    }

    let att_path = input.join(ATTENTION_STATS_CSV);
    if att_path.is_file() {
        let stats = AttentionStats::load_stats_csv(&att_path)?;
        for role in stats.roles() {
            let p = output.join(format!("fdr_{role}.svg"));
            write_svg(&p, &render_fdr_dots(&stats, role)?)?;
            written.push(p);
        }
    }

    let mut entries: Vec<PathBuf> = fs::read_dir(input)
        .map_err(|e| Error::io(input, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            (name.starts_with("mds_") || name.starts_with("tsne_")) && name.ends_with(".csv")
        })
        .collect();
    entries.sort();
    for csv_path in entries {
        let rows = load_embedding_csv(&csv_path)?;
        let stem = csv_path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("embedding")
            .to_string();
        let method = if stem.starts_with("mds") {
            crate::projection::ProjectionMethod::Mds { out_dim: 2 }
        } else {
            crate::projection::ProjectionMethod::Tsne(Default::default())
        };
        let emb = Embedding2D {
            coords: rows.coords,
            method,
        };
        let p = output.join(format!("{stem}.svg"));
        write_svg(&p, &render_scatter(&emb, &rows.labels, &stem.replace('_', " "))?)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::{HeadStats, Statistic};
    use crate::projection::ProjectionMethod;
    use ndarray::{array, Array2};

    fn parse(svg: &str) {
        roxmltree::Document::parse(svg).expect("well-formed SVG");
        assert!(!svg.contains("href"));
    }

    fn stats(layers: usize, heads: usize, value: f64) -> AttentionStats {
        let mut s = AttentionStats::default();
        for l in 1..=layers {
            for h in 0..heads {
                s.entries.insert(
                    (l, h, TokenRole::Obj),
                    HeadStats {
                        f_stat: Statistic::finite(value),
                        fdr_mean: Statistic::finite(value * (h + 1) as f64),
                        fdr_max: Statistic::finite(value),
                        groups: vec![],
                        group_means: vec![],
                        group_vars: vec![],
                    },
                );
            }
            let mean = value * (heads + 1) as f64 / 2.0;
            s.head_mean.insert((l, TokenRole::Obj), mean);
        }
        s
    }

    #[test]
    fn tick_formatting() {
        assert_eq!(format_tick(0.0), "0");
        assert_eq!(format_tick(1.23456), "1.23");
        assert_eq!(format_tick(-0.012345), "-0.0123");
        assert_eq!(format_tick(12.0), "12");
        assert_eq!(format_tick(12345.0), "12300");
        assert_eq!(format_tick(0.5), "0.5");
    }

    #[test]
    fn scatter_one_point_per_class() {
        let emb = Embedding2D {
            coords: array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0], [1.0, 1.0]],
            method: ProjectionMethod::Mds { out_dim: 2 },
        };
        let labels = ConstructionLabel::ALL;
        let svg = render_scatter(&emb, &labels, "CLS <L3>").unwrap();
        parse(&svg);
        assert_eq!(svg.matches("<circle").count(), 4);
        for color in ["#1f77b4", "#2ca02c", "#ff7f0e", "#d62728"] {
            assert_eq!(svg.matches(&format!(r#"r="3" fill="{color}""#)).count(), 1, "{color}");
        }
        for l in ConstructionLabel::ALL {
            assert!(svg.contains(&format!(">{}</text>", l.as_str())));
        }
        assert!(svg.contains(r#"width="800" height="600""#));
        assert_eq!(svg, render_scatter(&emb, &labels, "CLS <L3>").unwrap());
        assert!(render_scatter(&emb, &labels[..3], "x").is_err());
    }

    #[test]
    fn scatter_empty_embedding() {
        let emb = Embedding2D {
            coords: Array2::zeros((0, 2)),
            method: ProjectionMethod::Mds { out_dim: 2 },
        };
        let svg = render_scatter(&emb, &[], "empty").unwrap();
        parse(&svg);
        assert_eq!(svg.matches("<circle").count(), 0);
        assert!(svg.contains("transitive"));
    }

    #[test]
    fn line_chart_shapes() {
        let mut series = BTreeMap::new();
        series.insert(TokenRole::Cls, vec![(0, 0.5), (1, 0.5), (2, 0.5)]);
        let svg = render_line(&series, "GDV");
        parse(&svg);
        assert_eq!(svg.matches("<polyline").count(), 1);
        // constant value: every vertex shares the same y
        let pts = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        let ys: Vec<&str> = pts.split(' ').map(|p| p.split(',').nth(1).unwrap()).collect();
        assert!(ys.windows(2).all(|w| w[0] == w[1]));

        let mut series = BTreeMap::new();
        for role in [
            TokenRole::Cls,
            TokenRole::Det,
            TokenRole::Subj,
            TokenRole::Verb,
            TokenRole::Obj,
        ] {
            series.insert(role, (0..13).map(|l| (l, -0.01 * l as f64)).collect());
        }
        let svg = render_line(&series, "GDV");
        parse(&svg);
        assert_eq!(svg.matches("<polyline").count(), 5);
    }

    #[test]
    fn fdr_dots_counts() {
        let svg = render_fdr_dots(&stats(12, 12, 0.1), TokenRole::Obj).unwrap();
        parse(&svg);
        assert_eq!(svg.matches("<circle").count(), 144);
        assert_eq!(svg.matches("stroke-dasharray").count(), 12);
        assert!(render_fdr_dots(&stats(2, 2, 0.1), TokenRole::Verb).is_err());
    }

    #[test]
    fn fdr_zero_stats_sit_on_axis() {
        let svg = render_fdr_dots(&stats(3, 4, 0.0), TokenRole::Obj).unwrap();
        let axis_y = format!("cy=\"{:.2}\"", HEIGHT - MARGIN);
        assert_eq!(svg.matches(&axis_y).count(), 12);
    }

    #[test]
    fn fdr_single_head_mean_matches_dot() {
        let mut s = stats(1, 1, 0.4);
        s.head_mean.insert((1, TokenRole::Obj), 0.4);
        let svg = render_fdr_dots(&s, TokenRole::Obj).unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert_eq!(svg.matches("stroke-dasharray").count(), 1);
        let cy = svg
            .split("<circle")
            .nth(1)
            .unwrap()
            .split("cy=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        let line = svg
            .split("stroke-dasharray")
            .next()
            .unwrap()
            .rsplit("<line")
            .next()
            .unwrap();
        assert!(line.contains(&format!("y1=\"{cy}\"")));
    }
}
