//! Activation archive: a manifest plus raw little-endian `f32` tensors.
//!
//! Directory layout:
//!
//! ```text
//! manifest.json
//! hidden/layer_{L}.f32      L = 0..=n_layers   [n_sentences, max_tokens, hidden_size]
//! attention/layer_{L}.f32   L = 1..=n_layers   [n_sentences, n_heads, max_tokens, max_tokens]
//! ```
//!
//! Tensors are row-major with no header. Hidden layer 0 is the embedding output
//! and layer `k` the output of encoder block `k`. Attention `A[s, h, i, j]` is the
//! weight query position `i` puts on key position `j`; valid rows sum to one and
//! padding rows are zero.

use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use ndarray::{Array2, Array3, Array4};
use serde::{Deserialize, Serialize};

use crate::dataset::schema_for;
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

/// Argument structure construction class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstructionLabel {
    Transitive,
    Ditransitive,
    CausedMotion,
    Resultative,
}

impl ConstructionLabel {
    pub const ALL: [ConstructionLabel; 4] = [
        ConstructionLabel::Transitive,
        ConstructionLabel::Ditransitive,
        ConstructionLabel::CausedMotion,
        ConstructionLabel::Resultative,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ConstructionLabel::Transitive => "transitive",
            ConstructionLabel::Ditransitive => "ditransitive",
            ConstructionLabel::CausedMotion => "caused_motion",
            ConstructionLabel::Resultative => "resultative",
        }
    }
}

impl fmt::Display for ConstructionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ConstructionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown construction label {s:?}")))
    }
}

/// Syntactic role of a token. `DET` used as a selector means the first determiner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TokenRole {
    #[serde(rename = "CLS")]
    Cls,
    #[serde(rename = "DET")]
    Det,
    #[serde(rename = "SUBJ")]
    Subj,
    #[serde(rename = "VERB")]
    Verb,
    #[serde(rename = "OBJ")]
    Obj,
    #[serde(rename = "INDOBJ")]
    IndObj,
    #[serde(rename = "PREP")]
    Prep,
    #[serde(rename = "OBJPREP")]
    ObjPrep,
    #[serde(rename = "SEP")]
    Sep,
    #[serde(rename = "OTHER")]
    Other,
}

impl TokenRole {
    pub const ALL: [TokenRole; 10] = [
        TokenRole::Cls,
        TokenRole::Det,
        TokenRole::Subj,
        TokenRole::Verb,
        TokenRole::Obj,
        TokenRole::IndObj,
        TokenRole::Prep,
        TokenRole::ObjPrep,
        TokenRole::Sep,
        TokenRole::Other,
    ];

    /// Roles shared by every construction.
    pub const COMMON: [TokenRole; 6] = [
        TokenRole::Cls,
        TokenRole::Det,
        TokenRole::Subj,
        TokenRole::Verb,
        TokenRole::Obj,
        TokenRole::Sep,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TokenRole::Cls => "CLS",
            TokenRole::Det => "DET",
            TokenRole::Subj => "SUBJ",
            TokenRole::Verb => "VERB",
            TokenRole::Obj => "OBJ",
            TokenRole::IndObj => "INDOBJ",
            TokenRole::Prep => "PREP",
            TokenRole::ObjPrep => "OBJPREP",
            TokenRole::Sep => "SEP",
            TokenRole::Other => "OTHER",
        }
    }

    pub fn is_common(self) -> bool {
        Self::COMMON.contains(&self)
    }
}

impl fmt::Display for TokenRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TokenRole {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let upper = s.trim().to_ascii_uppercase();
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == upper)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown token role {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenRecord {
    pub text: String,
    pub role: TokenRole,
    /// Index into the token axis; absent in sentence-set interchange files.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentenceRecord {
    pub id: u64,
    pub text: String,
    pub label: ConstructionLabel,
    pub tokens: Vec<TokenRecord>,
}

impl SentenceRecord {
    pub fn roles(&self) -> Vec<TokenRole> {
        self.tokens.iter().map(|t| t.role).collect()
    }

    /// Position of the first token with `role`.
    pub fn position_of(&self, role: TokenRole) -> Option<usize> {
        self.tokens.iter().find(|t| t.role == role).and_then(|t| t.position)
    }

    /// Number of valid (non-padding) positions: one past the last token position.
    pub fn valid_len(&self) -> usize {
        self.tokens.last().and_then(|t| t.position).map_or(0, |p| p + 1)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchiveManifest {
    pub format_version: u32,
    pub model_id: String,
    pub n_layers: usize,
    pub hidden_size: usize,
    pub n_heads: usize,
    pub max_tokens: usize,
    pub n_sentences: usize,
    pub sentences: Vec<SentenceRecord>,
}

impl ArchiveManifest {
    pub fn hidden_shape(&self) -> [usize; 3] {
        [self.n_sentences, self.max_tokens, self.hidden_size]
    }

    pub fn attention_shape(&self) -> [usize; 4] {
        [self.n_sentences, self.n_heads, self.max_tokens, self.max_tokens]
    }

    /// Exact byte length of one `hidden/layer_{L}.f32` file.
    pub fn hidden_file_len(&self) -> u64 {
        self.hidden_shape().iter().map(|&d| d as u64).product::<u64>() * 4
    }

    /// Exact byte length of one `attention/layer_{L}.f32` file.
    pub fn attention_file_len(&self) -> u64 {
        self.attention_shape().iter().map(|&d| d as u64).product::<u64>() * 4
    }

    pub fn labels(&self) -> Vec<ConstructionLabel> {
        self.sentences.iter().map(|s| s.label).collect()
    }

    /// Checks the structural invariants of the manifest and its sentence records.
    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::UnsupportedVersion {
                found: self.format_version,
                expected: FORMAT_VERSION,
            });
        }
        for (name, v) in [
            ("n_layers", self.n_layers),
            ("hidden_size", self.hidden_size),
            ("n_heads", self.n_heads),
            ("max_tokens", self.max_tokens),
            ("n_sentences", self.n_sentences),
        ] {
            if v == 0 {
                return Err(Error::ManifestInvalid(format!("{name} must be > 0")));
            }
        }
        if self.n_sentences != self.sentences.len() {
            return Err(Error::ManifestInvalid(format!(
                "n_sentences = {} but {} sentence records",
                self.n_sentences,
                self.sentences.len()
            )));
        }
        for s in &self.sentences {
            self.validate_sentence(s)?;
        }
        Ok(())
    }

    fn validate_sentence(&self, s: &SentenceRecord) -> Result<()> {
        let bad = |msg: String| Error::ManifestInvalid(format!("sentence {}: {msg}", s.id));
        let first = s.tokens.first().map(|t| t.role);
        let last = s.tokens.last().map(|t| t.role);
        if first != Some(TokenRole::Cls) || last != Some(TokenRole::Sep) {
            return Err(bad("token sequence must begin with CLS and end with SEP".into()));
        }
        let mut prev: Option<usize> = None;
        for t in &s.tokens {
            let p = t
                .position
                .ok_or_else(|| bad(format!("token {:?} has no position", t.text)))?;
            if p >= self.max_tokens {
                return Err(bad(format!("position {p} >= max_tokens {}", self.max_tokens)));
            }
            if prev.is_some_and(|q| p <= q) {
                return Err(bad("positions are not strictly increasing".into()));
            }
            prev = Some(p);
        }
        if s.roles() != schema_for(s.label).roles {
            return Err(bad(format!("role sequence does not match the {} schema", s.label)));
        }
        Ok(())
    }
}

/// In-memory archive. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationArchive {
    manifest: ArchiveManifest,
    /// Index `L` holds hidden layer `L`, `L = 0..=n_layers`.
    hidden: Vec<Array3<f32>>,
    /// Index `L - 1` holds attention layer `L`, `L = 1..=n_layers`.
    attention: Vec<Array4<f32>>,
}

impl ActivationArchive {
    pub fn new(manifest: ArchiveManifest, hidden: Vec<Array3<f32>>, attention: Vec<Array4<f32>>) -> Result<Self> {
        manifest.validate()?;
        check_shapes(&manifest, &hidden, &attention)?;
        Ok(Self {
            manifest,
            hidden,
            attention,
        })
    }

    pub fn manifest(&self) -> &ArchiveManifest {
        &self.manifest
    }

    pub fn n_layers(&self) -> usize {
        self.manifest.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.manifest.n_heads
    }

    pub fn sentences(&self) -> &[SentenceRecord] {
        &self.manifest.sentences
    }

    pub fn hidden(&self, layer: usize) -> Result<&Array3<f32>> {
        self.hidden.get(layer).ok_or(Error::LayerOutOfRange {
            layer,
            min: 0,
            max: self.manifest.n_layers,
        })
    }

    pub fn attention(&self, layer: usize) -> Result<&Array4<f32>> {
        layer
            .checked_sub(1)
            .and_then(|i| self.attention.get(i))
            .ok_or(Error::LayerOutOfRange {
                layer,
                min: 1,
                max: self.manifest.n_layers,
            })
    }

    pub fn hidden_layers(&self) -> &[Array3<f32>] {
        &self.hidden
    }

    pub fn attention_layers(&self) -> &[Array4<f32>] {
        &self.attention
    }

    pub fn into_parts(self) -> (ArchiveManifest, Vec<Array3<f32>>, Vec<Array4<f32>>) {
        (self.manifest, self.hidden, self.attention)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        write_archive(&self.manifest, &self.hidden, &self.attention, dir)
    }

    /// Checks every valid attention row sums to 1 within `tol`.
    pub fn validate_attention(&self, tol: f64) -> Result<()> {
        for (li, att) in self.attention.iter().enumerate() {
            for (s, sent) in self.manifest.sentences.iter().enumerate() {
                let valid = sent.valid_len();
                for h in 0..self.manifest.n_heads {
                    for i in 0..valid {
                        let sum: f64 = (0..self.manifest.max_tokens)
                            .map(|j| f64::from(att[[s, h, i, j]]))
                            .sum();
                        if (sum - 1.0).abs() > tol {
                            return Err(Error::AttentionRow {
                                layer: li + 1,
                                sentence: s,
                                head: h,
                                query: i,
                                sum,
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks padding positions hold zero hidden vectors and zero attention rows.
    pub fn validate_padding(&self) -> Result<()> {
        let m = &self.manifest;
        for (s, sent) in m.sentences.iter().enumerate() {
            let valid = sent.valid_len();
            for p in valid..m.max_tokens {
                for (l, hid) in self.hidden.iter().enumerate() {
                    if hid.slice(ndarray::s![s, p, ..]).iter().any(|&v| v != 0.0) {
                        return Err(Error::Padding {
                            tensor: format!("hidden/layer_{l}"),
                            sentence: s,
                            position: p,
                        });
                    }
                }
                for (li, att) in self.attention.iter().enumerate() {
                    if att.slice(ndarray::s![s, .., p, ..]).iter().any(|&v| v != 0.0) {
                        return Err(Error::Padding {
                            tensor: format!("attention/layer_{}", li + 1),
                            sentence: s,
                            position: p,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn check_shapes(manifest: &ArchiveManifest, hidden: &[Array3<f32>], attention: &[Array4<f32>]) -> Result<()> {
    if hidden.len() != manifest.n_layers + 1 {
        return Err(Error::Shape {
            tensor: "hidden (layer count)".into(),
            expected: vec![manifest.n_layers + 1],
            actual: vec![hidden.len()],
        });
    }
    if attention.len() != manifest.n_layers {
        return Err(Error::Shape {
            tensor: "attention (layer count)".into(),
            expected: vec![manifest.n_layers],
            actual: vec![attention.len()],
        });
    }
    let hs = manifest.hidden_shape();
    for (l, h) in hidden.iter().enumerate() {
        if h.shape() != hs {
            return Err(Error::Shape {
                tensor: format!("hidden/layer_{l}"),
                expected: hs.to_vec(),
                actual: h.shape().to_vec(),
            });
        }
    }
    let a_shape = manifest.attention_shape();
    for (i, a) in attention.iter().enumerate() {
        if a.shape() != a_shape {
            return Err(Error::Shape {
                tensor: format!("attention/layer_{}", i + 1),
                expected: a_shape.to_vec(),
                actual: a.shape().to_vec(),
            });
        }
    }
    Ok(())
}

pub fn hidden_path(dir: &Path, layer: usize) -> PathBuf {
    dir.join("hidden").join(format!("layer_{layer}.f32"))
}

pub fn attention_path(dir: &Path, layer: usize) -> PathBuf {
    dir.join("attention").join(format!("layer_{layer}.f32"))
}

/// Writes the archive layout under `dir`, creating it if needed.
pub fn write_archive(
    manifest: &ArchiveManifest,
    hidden: &[Array3<f32>],
    attention: &[Array4<f32>],
    dir: &Path,
) -> Result<()> {
    manifest.validate()?;
    check_shapes(manifest, hidden, attention)?;

    for sub in ["hidden", "attention"] {
        let p = dir.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    let manifest_path = dir.join(MANIFEST_FILE);
    let json = serde_json::to_string_pretty(manifest).map_err(|source| Error::Json {
        path: manifest_path.clone(),
        source,
    })?;
    fs::write(&manifest_path, json).map_err(|e| Error::io(&manifest_path, e))?;

    for (l, h) in hidden.iter().enumerate() {
        write_f32(&hidden_path(dir, l), h.iter().copied())?;
    }
    for (i, a) in attention.iter().enumerate() {
        write_f32(&attention_path(dir, i + 1), a.iter().copied())?;
    }
    Ok(())
}

fn write_f32(path: &Path, values: impl Iterator<Item = f32>) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for v in values {
        w.write_all(&v.to_le_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_f32(path: &Path, expected_len: u64) -> Result<Vec<f32>> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let actual = bytes.len() as u64;
    if actual < expected_len {
        return Err(Error::Truncated {
            path: path.to_path_buf(),
            expected: expected_len,
            actual,
        });
    }
    if actual > expected_len {
        return Err(Error::Oversized {
            path: path.to_path_buf(),
            expected: expected_len,
            actual,
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn read_manifest(dir: &Path) -> Result<ArchiveManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.is_file() {
        return Err(Error::MissingFile(path));
    }
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: ArchiveManifest = serde_json::from_str(&text).map_err(|source| Error::Json { path, source })?;
    manifest.validate()?;
    Ok(manifest)
}

/// Reads an archive directory. Attention row sums are not checked here; call
/// [`ActivationArchive::validate_attention`] when needed.
pub fn read_archive(dir: &Path) -> Result<ActivationArchive> {
    let manifest = read_manifest(dir)?;
    let hs = manifest.hidden_shape();
    let a_shape = manifest.attention_shape();

    let hidden = (0..=manifest.n_layers)
        .map(|l| {
            let data = read_f32(&hidden_path(dir, l), manifest.hidden_file_len())?;
            Ok(Array3::from_shape_vec(hs, data).expect("length checked"))
        })
        .collect::<Result<Vec<_>>>()?;
    let attention = (1..=manifest.n_layers)
        .map(|l| {
            let data = read_f32(&attention_path(dir, l), manifest.attention_file_len())?;
            Ok(Array4::from_shape_vec(a_shape, data).expect("length checked"))
        })
        .collect::<Result<Vec<_>>>()?;

    ActivationArchive::new(manifest, hidden, attention)
}

/// Hidden vectors of one role at one layer, one row per sentence that has the role.
#[derive(Debug, Clone, PartialEq)]
pub struct RoleSlice {
    pub features: Array2<f64>,
    pub labels: Vec<ConstructionLabel>,
    pub sentence_ids: Vec<u64>,
    /// Sentences lacking the role.
    pub skipped: Vec<u64>,
}

impl RoleSlice {
    pub fn class_indices(&self) -> Vec<usize> {
        self.labels.iter().map(|l| l.index()).collect()
    }
}

pub fn slice_role(archive: &ActivationArchive, role: TokenRole, layer: usize) -> Result<RoleSlice> {
    let hidden = archive.hidden(layer)?;
    let d = archive.manifest.hidden_size;

    let mut rows = Vec::new();
    let mut labels = Vec::new();
    let mut sentence_ids = Vec::new();
    let mut skipped = Vec::new();
    for (s, sent) in archive.sentences().iter().enumerate() {
        match sent.position_of(role) {
            Some(p) => {
                rows.extend(hidden.slice(ndarray::s![s, p, ..]).iter().map(|&v| f64::from(v)));
                labels.push(sent.label);
                sentence_ids.push(sent.id);
            }
            None => skipped.push(sent.id),
        }
    }
    if labels.is_empty() {
        return Err(Error::EmptySelection(role));
    }
    let features = Array2::from_shape_vec((labels.len(), d), rows).expect("row-major rows");
    Ok(RoleSlice {
        features,
        labels,
        sentence_ids,
        skipped,
    })
}
