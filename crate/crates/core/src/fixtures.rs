//! Deterministic synthetic archives.
//!
//! Hidden vectors at a role position are `sigma * (separation * v_c + z)` where
//! `v_c` is the class vertex of a regular tetrahedron with unit edge (so class
//! centroids sit `separation * sigma` apart) and `z` is standard normal noise.
//! Attention rows are a softmax over valid keys of seeded logit noise plus a
//! per-role bias scaled by the class index, or an exactly uniform pattern.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array3, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::archive::{ActivationArchive, ArchiveManifest, TokenRole, FORMAT_VERSION};
use crate::dataset::{generate_dataset, SlotVocabulary};
use crate::error::{Error, Result};

/// Class centroid separation per (layer, role), in units of sigma.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Separation {
    /// Used for roles without an explicit schedule.
    #[serde(default)]
    pub default: f64,
    /// One value per hidden layer `0..=n_layers`.
    #[serde(default)]
    pub roles: BTreeMap<TokenRole, Vec<f64>>,
}

impl Separation {
    pub fn at(&self, layer: usize, role: TokenRole) -> f64 {
        self.roles
            .get(&role)
            .and_then(|v| v.get(layer).copied())
            .unwrap_or(self.default)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum AttentionSpec {
    /// Softmax over valid keys of `logit_noise * z + role_bias[role] * class_index`.
    Softmax {
        #[serde(default = "one")]
        logit_noise: f64,
        #[serde(default)]
        role_bias: BTreeMap<TokenRole, f64>,
    },
    /// Every valid query spreads its weight evenly over the other valid tokens
    /// (zero self weight). Weights are multiples of 2^-20 chosen so every row
    /// and every column sums to exactly 1, making the received mass identical
    /// for every token and sentence length.
    Uniform,
}

impl Default for AttentionSpec {
    fn default() -> Self {
        AttentionSpec::Softmax {
            logit_noise: 1.0,
            role_bias: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureSpec {
    pub n_per_class: usize,
    pub hidden_size: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    #[serde(default = "one")]
    pub sigma: f64,
    #[serde(default)]
    pub separation: Separation,
    #[serde(default)]
    pub attention: AttentionSpec,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> f64 {
    1.0
}

pub const FIXTURE_MAX_TOKENS: usize = 10;
pub const FIXTURE_MODEL_ID: &str = "synthetic-fixture";

impl FixtureSpec {
    pub fn new(n_per_class: usize, hidden_size: usize, n_layers: usize, n_heads: usize, seed: u64) -> Self {
        Self {
            n_per_class,
            hidden_size,
            n_layers,
            n_heads,
            sigma: 1.0,
            separation: Separation::default(),
            attention: AttentionSpec::default(),
            seed,
        }
    }

    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("n_per_class", self.n_per_class),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
        ] {
            if v == 0 {
                return Err(Error::InvalidParameter(format!("{name} must be >= 1")));
            }
        }
        if self.hidden_size < 3 {
            return Err(Error::InvalidParameter(
                "hidden_size must be >= 3 to hold the class simplex".into(),
            ));
        }
        if self.sigma.is_nan() || self.sigma <= 0.0 {
            return Err(Error::InvalidParameter("sigma must be positive".into()));
        }
        let mut all: Vec<f64> = vec![self.separation.default];
        for (role, sched) in &self.separation.roles {
            if sched.len() != self.n_layers + 1 {
                return Err(Error::InvalidParameter(format!(
                    "separation schedule for {role} has {} entries, expected {}",
                    sched.len(),
                    self.n_layers + 1
                )));
            }
            all.extend(sched);
        }
        if all.iter().any(|d| !d.is_finite() || *d < 0.0) {
            return Err(Error::InvalidParameter("separations must be finite and >= 0".into()));
        }
        Ok(())
    }
}

/// Regular tetrahedron with unit edge length.
fn simplex_vertex(class: usize) -> [f64; 3] {
    const V: [[f64; 3]; 4] = [[1.0, 1.0, 1.0], [1.0, -1.0, -1.0], [-1.0, 1.0, -1.0], [-1.0, -1.0, 1.0]];
    let s = 1.0 / 8f64.sqrt();
    V[class].map(|x| x * s)
}

/// Circulant offsets for [`AttentionSpec::Uniform`]: `len - 1` weights on the
/// 2^-20 grid that sum to exactly 1.
fn uniform_offsets(len: usize) -> Vec<f32> {
    if len < 2 {
        return Vec::new();
    }
    const UNITS: u32 = 1 << 20;
    let k = (len - 1) as u32;
    let base = UNITS / k;
    let extra = UNITS - base * k;
    (0..k)
        .map(|o| (base + u32::from(o < extra)) as f32 / UNITS as f32)
        .collect()
}

pub fn synth_archive(spec: &FixtureSpec) -> Result<ActivationArchive> {
    spec.validate()?;
    let set = generate_dataset(&SlotVocabulary::default(), spec.n_per_class, spec.seed)?;
    let mut sentences = set.sentences;
    for s in &mut sentences {
        for (p, t) in s.tokens.iter_mut().enumerate() {
            t.position = Some(p);
        }
    }
    let manifest = ArchiveManifest {
        format_version: FORMAT_VERSION,
        model_id: FIXTURE_MODEL_ID.into(),
        n_layers: spec.n_layers,
        hidden_size: spec.hidden_size,
        n_heads: spec.n_heads,
        max_tokens: FIXTURE_MAX_TOKENS,
        n_sentences: sentences.len(),
        sentences,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut normal = move || -> f64 { StandardNormal.sample(&mut rng) };

    let mut hidden = Vec::with_capacity(spec.n_layers + 1);
    for layer in 0..=spec.n_layers {
        let mut h = Array3::<f32>::zeros(manifest.hidden_shape());
        for (s, sent) in manifest.sentences.iter().enumerate() {
            let vertex = simplex_vertex(sent.label.index());
            for tok in &sent.tokens {
                let p = tok.position.expect("positions assigned");
                let delta = spec.separation.at(layer, tok.role);
                for d in 0..spec.hidden_size {
                    let centroid = if d < 3 { delta * vertex[d] } else { 0.0 };
                    h[[s, p, d]] = (spec.sigma * (centroid + normal())) as f32;
                }
            }
        }
        hidden.push(h);
    }

    let mut attention = Vec::with_capacity(spec.n_layers);
    for _layer in 1..=spec.n_layers {
        let mut a = Array4::<f32>::zeros(manifest.attention_shape());
        for (s, sent) in manifest.sentences.iter().enumerate() {
            let len = sent.valid_len();
            let class = sent.label.index() as f64;
            for head in 0..spec.n_heads {
                match &spec.attention {
                    AttentionSpec::Uniform => {
                        let offsets = uniform_offsets(len);
                        for i in 0..len {
                            for (o, &w) in offsets.iter().enumerate() {
                                a[[s, head, i, (i + o + 1) % len]] = w;
                            }
                        }
                    }
                    AttentionSpec::Softmax { logit_noise, role_bias } => {
                        for i in 0..len {
                            let logits: Vec<f64> = sent
                                .tokens
                                .iter()
                                .map(|t| {
                                    logit_noise * normal() + role_bias.get(&t.role).copied().unwrap_or(0.0) * class
                                })
                                .collect();
                            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                            let sum: f64 = exps.iter().sum();
                            for (j, e) in exps.iter().enumerate() {
                                a[[s, head, i, j]] = (e / sum) as f32;
                            }
                        }
                    }
                }
            }
        }
        attention.push(a);
    }

    ActivationArchive::new(manifest, hidden, attention)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::archive::read_archive;

    #[test]
    fn simplex_has_unit_edges() {
        for a in 0..4 {
            for b in a + 1..4 {
                let (va, vb) = (simplex_vertex(a), simplex_vertex(b));
                let d: f64 = (0..3).map(|k| (va[k] - vb[k]).powi(2)).sum::<f64>().sqrt();
                assert!((d - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn uniform_offsets_sum_exactly_to_one() {
        for len in 2..=10 {
            let w = uniform_offsets(len);
            assert_eq!(w.len(), len - 1);
            let s: f64 = w.iter().map(|&x| f64::from(x)).sum();
            assert_eq!(s, 1.0);
            let spread = w.iter().cloned().fold(0.0f32, f32::max) - w.iter().cloned().fold(1.0f32, f32::min);
            assert!(spread <= 1.0 / (1 << 20) as f32);
        }
    }

    #[test]
    fn archive_invariants_hold() {
        let mut spec = FixtureSpec::new(5, 6, 2, 3, 4);
        spec.separation.default = 2.0;
        let arch = synth_archive(&spec).unwrap();
        assert_eq!(arch.manifest().n_sentences, 20);
        arch.validate_attention(1e-6).unwrap();
        arch.validate_padding().unwrap();

        spec.attention = AttentionSpec::Uniform;
        let uni = synth_archive(&spec).unwrap();
        uni.validate_attention(1e-6).unwrap();
        uni.validate_padding().unwrap();
    }

    #[test]
    fn same_spec_same_bytes() {
        let spec = FixtureSpec::new(3, 4, 1, 2, 9);
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        synth_archive(&spec).unwrap().write(a.path()).unwrap();
        synth_archive(&spec).unwrap().write(b.path()).unwrap();
        for rel in ["manifest.json", "hidden/layer_1.f32", "attention/layer_1.f32"] {
            assert_eq!(
                fs::read(a.path().join(rel)).unwrap(),
                fs::read(b.path().join(rel)).unwrap()
            );
        }
        let back = read_archive(a.path()).unwrap();
        assert_eq!(back, synth_archive(&spec).unwrap());
    }

    #[test]
    fn spec_json_round_trip_and_validation() {
        let json = r#"{
            "n_per_class": 4, "hidden_size": 8, "n_layers": 2, "n_heads": 2,
            "separation": {"default": 0.0, "roles": {"CLS": [0.0, 1.0, 2.0]}},
            "attention": {"mode": "softmax", "logit_noise": 0.5, "role_bias": {"OBJ": 1.0}},
            "seed": 3
        }"#;
        let spec: FixtureSpec = serde_json::from_str(json).unwrap();
        spec.validate().unwrap();
        assert_eq!(spec.separation.at(2, TokenRole::Cls), 2.0);
        assert_eq!(spec.separation.at(2, TokenRole::Obj), 0.0);

        let mut bad = spec.clone();
        bad.separation.roles.insert(TokenRole::Verb, vec![1.0]);
        assert!(bad.validate().is_err());
        let mut bad = spec;
        bad.hidden_size = 2;
        assert!(synth_archive(&bad).is_err());
    }
}
