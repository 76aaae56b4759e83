//! Construction schemas and balanced sentence-set generation.
//!
//! Sentences are produced from slot templates: every schema position other than
//! `CLS`/`SEP` is a slot with a word list, and a sentence is one point of the
//! Cartesian product of its construction's slot lists. Generation draws
//! `per_class` distinct points per construction, uniformly without replacement,
//! from an RNG stream derived from the master seed and the construction.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::archive::{ConstructionLabel, SentenceRecord, TokenRecord, TokenRole};
use crate::error::{Error, Result};

pub const CLS_TEXT: &str = "[CLS]";
pub const SEP_TEXT: &str = "[SEP]";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConstructionSchema {
    pub label: ConstructionLabel,
    pub roles: &'static [TokenRole],
}

impl ConstructionSchema {
    /// Number of open (word) slots, i.e. roles minus CLS and SEP.
    pub fn n_slots(&self) -> usize {
        self.roles.len() - 2
    }

    pub fn slot_roles(&self) -> &'static [TokenRole] {
        &self.roles[1..self.roles.len() - 1]
    }
}

use TokenRole::{Cls, Det, IndObj, Obj, ObjPrep, Prep, Sep, Subj, Verb};

const TRANSITIVE: &[TokenRole] = &[Cls, Det, Subj, Verb, Det, Obj, Sep];
const DITRANSITIVE: &[TokenRole] = &[Cls, Det, Subj, Verb, IndObj, Obj, Sep];
const CAUSED_MOTION: &[TokenRole] = &[Cls, Det, Subj, Verb, Det, Obj, Prep, Det, ObjPrep, Sep];
const RESULTATIVE: &[TokenRole] = &[Cls, Det, Subj, Verb, Det, Obj, Prep, ObjPrep, Sep];

pub fn schema_for(label: ConstructionLabel) -> ConstructionSchema {
    let roles = match label {
        ConstructionLabel::Transitive => TRANSITIVE,
        ConstructionLabel::Ditransitive => DITRANSITIVE,
        ConstructionLabel::CausedMotion => CAUSED_MOTION,
        ConstructionLabel::Resultative => RESULTATIVE,
    };
    ConstructionSchema { label, roles }
}

/// Word lists per construction, one list per open slot in schema order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SlotVocabulary {
    pub slots: BTreeMap<ConstructionLabel, Vec<Vec<String>>>,
}

impl SlotVocabulary {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let vocab: Self = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn slots_for(&self, label: ConstructionLabel) -> Result<&[Vec<String>]> {
        self.slots
            .get(&label)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Vocabulary(format!("no slot lists for {label}")))
    }

    /// Number of distinct sentences the slot lists of `label` can produce.
    pub fn capacity(&self, label: ConstructionLabel) -> Result<u128> {
        Ok(self
            .slots_for(label)?
            .iter()
            .fold(1u128, |acc, s| acc.saturating_mul(s.len() as u128)))
    }

    pub fn validate(&self) -> Result<()> {
        for label in ConstructionLabel::ALL {
            let schema = schema_for(label);
            let slots = self.slots_for(label)?;
            if slots.len() != schema.n_slots() {
                return Err(Error::Vocabulary(format!(
                    "{label} needs {} slot lists, found {}",
                    schema.n_slots(),
                    slots.len()
                )));
            }
            for (i, words) in slots.iter().enumerate() {
                if words.is_empty() {
                    return Err(Error::Vocabulary(format!("{label} slot {i} is empty")));
                }
                if let Some(w) = words.iter().find(|w| w.is_empty() || w.contains(char::is_whitespace)) {
                    return Err(Error::Vocabulary(format!(
                        "{label} slot {i}: {w:?} is not a single lexical item"
                    )));
                }
            }
        }
        Ok(())
    }
}

fn words(list: &str) -> Vec<String> {
    list.split_whitespace().map(str::to_owned).collect()
}

const DETERMINERS: &str = "the a";

const AGENTS: &str = "baker teacher chef farmer doctor pilot nurse artist worker student \
    driver singer writer player soldier sailor gardener lawyer waiter clerk \
    hunter painter dancer miner butcher plumber tailor guard coach poet";

const TRANSITIVE_VERBS: &str = "baked chased watched found caught cleaned opened fixed built \
    visited bought sold painted washed lifted carried helped followed called \
    admired hired thanked greeted praised ignored";

const THINGS: &str = "cake mouse door car house letter book window table chair box \
    bottle basket ball rope bag boat wagon lamp cart plate bench coat \
    shirt ladder barrel bucket";

const DITRANSITIVE_VERBS: &str = "gave sent offered handed showed told brought threw passed lent \
    sold taught wrote mailed promised read owed bought cooked baked fed \
    tossed paid served awarded";

const RECIPIENTS: &str = "students children customers friends guests neighbors parents workers \
    players visitors patients tourists farmers soldiers clients sailors \
    doctors nurses teachers kids him her them us me";

const GIFTS: &str = "homework money flowers advice letters tickets coffee bread soup \
    candy toys gifts books presents water food medicine lessons news \
    instructions directions cookies tea milk fruit";

const MOTION_VERBS: &str = "pushed pulled threw kicked rolled dragged carried moved tossed \
    shoved lifted slid hauled pitched flung steered led chased drove \
    sent herded lowered hurled nudged tugged";

const PATH_PREPS: &str = "into onto across through toward over under along past behind";

const PLACES: &str = "garden garage room kitchen yard street river lake field forest park \
    barn shed hall house basement attic truck car office corridor tunnel \
    bridge cellar hallway alley";

const RESULT_VERBS: &str = "cut painted broke smashed crushed sliced chopped split tore \
    folded shaped turned made ground beat melted pressed twisted rolled \
    bent carved shattered knocked shredded hammered";

const RESULT_PREPS: &str = "into to";

const STATES: &str = "slices pieces halves bits shreds cubes strips chunks crumbs dust \
    powder fragments shards splinters ribbons flakes wedges squares \
    circles balls sheets layers threads particles ruins";

impl Default for SlotVocabulary {
    /// Curated single-word lists with at least 25 words per open noun/verb slot.
    fn default() -> Self {
        let det = words(DETERMINERS);
        let mut slots = BTreeMap::new();
        slots.insert(
            ConstructionLabel::Transitive,
            vec![
                det.clone(),
                words(AGENTS),
                words(TRANSITIVE_VERBS),
                det.clone(),
                words(THINGS),
            ],
        );
        slots.insert(
            ConstructionLabel::Ditransitive,
            vec![
                det.clone(),
                words(AGENTS),
                words(DITRANSITIVE_VERBS),
                words(RECIPIENTS),
                words(GIFTS),
            ],
        );
        slots.insert(
            ConstructionLabel::CausedMotion,
            vec![
                det.clone(),
                words(AGENTS),
                words(MOTION_VERBS),
                det.clone(),
                words(THINGS),
                words(PATH_PREPS),
                det.clone(),
                words(PLACES),
            ],
        );
        slots.insert(
            ConstructionLabel::Resultative,
            vec![
                det.clone(),
                words(AGENTS),
                words(RESULT_VERBS),
                det,
                words(THINGS),
                words(RESULT_PREPS),
                words(STATES),
            ],
        );
        SlotVocabulary { slots }
    }
}

/// Labeled sentences with role-annotated tokens. Interchange JSON shape:
/// `{"sentences": [{id, text, label, tokens: [{text, role}]}]}`.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SentenceSet {
    pub sentences: Vec<SentenceRecord>,
}

impl SentenceSet {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("sentence set serializes")
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn count(&self, label: ConstructionLabel) -> usize {
        self.sentences.iter().filter(|s| s.label == label).count()
    }
}

fn build_sentence(id: u64, label: ConstructionLabel, slot_words: &[&str]) -> SentenceRecord {
    let schema = schema_for(label);
    let mut tokens = Vec::with_capacity(schema.roles.len());
    tokens.push(TokenRecord {
        text: CLS_TEXT.into(),
        role: TokenRole::Cls,
        position: None,
    });
    for (&role, &w) in schema.slot_roles().iter().zip(slot_words) {
        tokens.push(TokenRecord {
            text: w.to_owned(),
            role,
            position: None,
        });
    }
    tokens.push(TokenRecord {
        text: SEP_TEXT.into(),
        role: TokenRole::Sep,
        position: None,
    });
    SentenceRecord {
        id,
        text: slot_words.join(" "),
        label,
        tokens,
    }
}

/// Generates `per_class` unique sentences for each construction.
pub fn generate_dataset(vocab: &SlotVocabulary, per_class: usize, seed: u64) -> Result<SentenceSet> {
    if per_class == 0 {
        return Err(Error::InvalidParameter("per_class must be >= 1".into()));
    }
    vocab.validate()?;

    let mut sentences = Vec::with_capacity(per_class * 4);
    for label in ConstructionLabel::ALL {
        let slots = vocab.slots_for(label)?;
        let capacity = vocab.capacity(label)?;
        if capacity < per_class as u128 {
            return Err(Error::Capacity {
                label,
                required: per_class,
                available: capacity,
            });
        }
        let space = usize::try_from(capacity)
            .map_err(|_| Error::Vocabulary(format!("{label}: slot product {capacity} exceeds the index range")))?;

        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(label.index() as u64);
        let picks = rand::seq::index::sample(&mut rng, space, per_class);

        for (k, combo) in picks.into_iter().enumerate() {
            // mixed-radix decode, last slot fastest
            let mut rest = combo;
            let mut chosen = vec![""; slots.len()];
            for (i, list) in slots.iter().enumerate().rev() {
                chosen[i] = &list[rest % list.len()];
                rest /= list.len();
            }
            let id = (label.index() * per_class + k) as u64;
            sentences.push(build_sentence(id, label, &chosen));
        }
    }
    Ok(SentenceSet { sentences })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConstructionFindings {
    pub label: ConstructionLabel,
    pub count: usize,
    /// Ids of sentences whose role sequence differs from the schema.
    pub schema_violations: Vec<u64>,
    /// Texts occurring more than once, attributed to this construction.
    pub duplicate_texts: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidationReport {
    pub constructions: Vec<ConstructionFindings>,
    pub balanced: bool,
    pub schema_conformant: bool,
    pub unique_texts: bool,
    pub pass: bool,
}

impl ValidationReport {
    pub fn counts(&self) -> Vec<usize> {
        self.constructions.iter().map(|c| c.count).collect()
    }
}

/// Checks counts, schema conformance, duplicates and balance. A set missing a
/// construction entirely is unbalanced.
pub fn validate_dataset(set: &SentenceSet) -> ValidationReport {
    let mut seen: HashMap<&str, usize> = HashMap::new();
    for s in &set.sentences {
        *seen.entry(s.text.as_str()).or_default() += 1;
    }

    let constructions: Vec<ConstructionFindings> = ConstructionLabel::ALL
        .into_iter()
        .map(|label| {
            let schema = schema_for(label);
            let members: Vec<&SentenceRecord> = set.sentences.iter().filter(|s| s.label == label).collect();
            let schema_violations = members
                .iter()
                .filter(|s| s.roles() != schema.roles)
                .map(|s| s.id)
                .collect();
            let mut duplicate_texts: Vec<String> = members
                .iter()
                .filter(|s| seen[s.text.as_str()] > 1)
                .map(|s| s.text.clone())
                .collect();
            duplicate_texts.sort();
            duplicate_texts.dedup();
            ConstructionFindings {
                label,
                count: members.len(),
                schema_violations,
                duplicate_texts,
            }
        })
        .collect();

    let first = constructions[0].count;
    let balanced = first > 0 && constructions.iter().all(|c| c.count == first);
    let schema_conformant = constructions.iter().all(|c| c.schema_violations.is_empty());
    let unique_texts = constructions.iter().all(|c| c.duplicate_texts.is_empty());
    ValidationReport {
        constructions,
        balanced,
        schema_conformant,
        unique_texts,
        pass: balanced && schema_conformant && unique_texts,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn singleton_vocab() -> SlotVocabulary {
        let mut slots = BTreeMap::new();
        for label in ConstructionLabel::ALL {
            let n = schema_for(label).n_slots();
            slots.insert(label, (0..n).map(|i| vec![format!("{}{i}", label.as_str())]).collect());
        }
        SlotVocabulary { slots }
    }

    #[test]
    fn schemas_match_construction_tables() {
        assert_eq!(schema_for(ConstructionLabel::Transitive).roles.len(), 7);
        assert_eq!(schema_for(ConstructionLabel::Ditransitive).roles.len(), 7);
        assert_eq!(schema_for(ConstructionLabel::CausedMotion).roles.len(), 10);
        assert_eq!(schema_for(ConstructionLabel::Resultative).roles.len(), 9);
        assert_eq!(
            schema_for(ConstructionLabel::Ditransitive).roles,
            &[Cls, Det, Subj, Verb, IndObj, Obj, Sep]
        );
    }

    #[test]
    fn default_vocab_is_valid_and_large() {
        let v = SlotVocabulary::default();
        v.validate().unwrap();
        for label in ConstructionLabel::ALL {
            for (role, list) in schema_for(label).slot_roles().iter().zip(v.slots_for(label).unwrap()) {
                if !matches!(role, Det | Prep) {
                    assert!(list.len() >= 25, "{label} {role}: {}", list.len());
                }
                let mut sorted = list.clone();
                sorted.sort();
                sorted.dedup();
                assert_eq!(sorted.len(), list.len(), "{label} {role} has repeated words");
            }
            assert!(v.capacity(label).unwrap() >= 500);
        }
    }

    #[test]
    fn full_size_generation_is_balanced() {
        let set = generate_dataset(&SlotVocabulary::default(), 500, 7).unwrap();
        assert_eq!(set.sentences.len(), 2000);
        let report = validate_dataset(&set);
        assert!(report.pass, "{report:?}");
        assert_eq!(report.counts(), vec![500, 500, 500, 500]);
    }

    #[test]
    fn singleton_slots_force_one_sentence() {
        let set = generate_dataset(&singleton_vocab(), 1, 3).unwrap();
        assert_eq!(set.sentences.len(), 4);
        assert_eq!(
            set.sentences[0].text,
            "transitive0 transitive1 transitive2 transitive3 transitive4"
        );
        assert!(validate_dataset(&set).pass);
    }

    #[test]
    fn capacity_error_reports_numbers() {
        match generate_dataset(&singleton_vocab(), 2, 3) {
            Err(Error::Capacity {
                required, available, ..
            }) => {
                assert_eq!(required, 2);
                assert_eq!(available, 1);
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let v = SlotVocabulary::default();
        let a = generate_dataset(&v, 50, 11).unwrap().to_json();
        let b = generate_dataset(&v, 50, 11).unwrap().to_json();
        assert_eq!(a, b);
        let c = generate_dataset(&v, 50, 12).unwrap().to_json();
        assert_ne!(a, c);
    }

    #[test]
    fn interchange_json_has_no_positions() {
        let set = generate_dataset(&SlotVocabulary::default(), 1, 0).unwrap();
        let v: serde_json::Value = serde_json::from_str(&set.to_json()).unwrap();
        let tok = &v["sentences"][0]["tokens"][0];
        assert_eq!(tok["role"], "CLS");
        assert!(tok.get("position").is_none());
        let back: SentenceSet = serde_json::from_value(v).unwrap();
        assert_eq!(back, set);
    }

    #[test]
    fn schema_violation_is_named() {
        let mut set = generate_dataset(&SlotVocabulary::default(), 3, 1).unwrap();
        let bad = set
            .sentences
            .iter_mut()
            .find(|s| s.label == ConstructionLabel::Transitive)
            .unwrap();
        bad.tokens.retain(|t| matches!(t.role, Cls | Det | Subj | Verb | Sep));
        bad.tokens.remove(4); // second DET
        assert_eq!(bad.roles(), vec![Cls, Det, Subj, Verb, Sep]);
        let id = bad.id;
        let report = validate_dataset(&set);
        assert!(!report.pass);
        assert_eq!(report.constructions[0].schema_violations, vec![id]);
    }

    #[test]
    fn imbalance_fails() {
        let mut set = generate_dataset(&SlotVocabulary::default(), 500, 1).unwrap();
        let pos = set
            .sentences
            .iter()
            .position(|s| s.label == ConstructionLabel::Transitive)
            .unwrap();
        set.sentences.remove(pos);
        let report = validate_dataset(&set);
        assert_eq!(report.counts(), vec![499, 500, 500, 500]);
        assert!(!report.balanced);
        assert!(!report.pass);
    }

    #[test]
    fn duplicates_detected() {
        let mut set = generate_dataset(&SlotVocabulary::default(), 2, 1).unwrap();
        let dup = set.sentences[0].clone();
        set.sentences[1] = SentenceRecord { id: 99, ..dup };
        let report = validate_dataset(&set);
        assert!(!report.unique_texts);
        assert_eq!(report.constructions[0].duplicate_texts.len(), 1);
    }
}
