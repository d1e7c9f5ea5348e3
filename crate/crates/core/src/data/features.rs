//! Hashed token n-gram features and precomputed feature tables.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::corpus::Corpus;
use crate::error::{Error, Result};
use crate::math::Vector;

const OPERATORS: [&str; 16] = [
    "++", "--", "==", "!=", "<=", ">=", "&&", "||", "<<", ">>", "+=", "-=", "*=", "/=", "->", "::",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HashKind {
    /// 64-bit FNV-1a; low bits pick the bucket, the top bit picks the sign.
    Fnv1a64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub dim: usize,
    pub ngram_orders: Vec<usize>,
    pub hash: HashKind,
}

impl Default for FeatureSpec {
    fn default() -> Self {
        FeatureSpec {
            dim: 256,
            ngram_orders: vec![1, 2],
            hash: HashKind::Fnv1a64,
        }
    }
}

impl FeatureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dim < 16 {
            return Err(Error::Config(format!("feature dim must be >= 16, got {}", self.dim)));
        }
        if self.ngram_orders.is_empty() || self.ngram_orders.contains(&0) {
            return Err(Error::Config("n-gram orders must be a non-empty set of positive integers".into()));
        }
        Ok(())
    }
}

fn fnv1a64(bytes: impl IntoIterator<Item = u8>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Splits code into identifier/number runs, common two-character
/// operators, and single punctuation characters.
pub fn tokenize(text: &str) -> Vec<&str> {
    let mut tokens = Vec::new();
    let mut rest = text;
    while let Some(c) = rest.chars().next() {
        if c.is_whitespace() {
            rest = &rest[c.len_utf8()..];
            continue;
        }
        let len = if c.is_alphanumeric() || c == '_' {
            rest.find(|ch: char| !(ch.is_alphanumeric() || ch == '_'))
                .unwrap_or(rest.len())
        } else if OPERATORS.iter().any(|op| rest.starts_with(op)) {
            2
        } else {
            c.len_utf8()
        };
        tokens.push(&rest[..len]);
        rest = &rest[len..];
    }
    tokens
}

/// Signed-hash bag of token n-grams, L2-normalized.
pub fn extract_features(spec: &FeatureSpec, text: &str) -> Result<Vector> {
    spec.validate()?;
    let tokens = tokenize(text);
    if tokens.is_empty() {
        return Err(Error::DegenerateInput("text has no tokens".into()));
    }
    let mut v = vec![0.0; spec.dim];
    for &n in &spec.ngram_orders {
        for gram in tokens.windows(n) {
            let key = n
                .to_le_bytes()
                .into_iter()
                .chain(gram.iter().enumerate().flat_map(|(i, t)| {
                    // 0x1f separates tokens
                    (i > 0).then_some(0x1f).into_iter().chain(t.bytes())
                }));
            let h = fnv1a64(key);
            let bucket = (h % spec.dim as u64) as usize;
            let sign = if h >> 63 == 0 { 1.0 } else { -1.0 };
            v[bucket] += sign;
        }
    }
    let norm = crate::math::norm(&v);
    if norm == 0.0 {
        return Err(Error::DegenerateInput("hashed n-gram counts cancel to zero".into()));
    }
    Vector::new(v.into_iter().map(|x| x / norm).collect())
}

/// Precomputed features keyed by text, used by corpora whose texts are
/// labels for points rather than source code.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct FeatureTable {
    entries: HashMap<String, Vector>,
    dim: usize,
}

#[derive(Serialize, Deserialize)]
struct TableRow {
    text: String,
    features: Vector,
}

impl FeatureTable {
    pub fn new(dim: usize) -> Self {
        FeatureTable {
            entries: HashMap::new(),
            dim,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn insert(&mut self, text: impl Into<String>, features: Vector) -> Result<()> {
        if features.dim() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: features.dim(),
            });
        }
        self.entries.insert(text.into(), features);
        Ok(())
    }

    pub fn get(&self, text: &str) -> Option<&Vector> {
        self.entries.get(text)
    }

    /// Line-delimited `{"text": ..., "features": [...]}` rows, sorted by text.
    pub fn to_jsonl(&self) -> String {
        let mut keys: Vec<&String> = self.entries.keys().collect();
        keys.sort();
        let mut out = String::new();
        for k in keys {
            let row = TableRow {
                text: k.clone(),
                features: self.entries[k].clone(),
            };
            out.push_str(&serde_json::to_string(&row).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut table: Option<FeatureTable> = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let row: TableRow = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            let t = table.get_or_insert_with(|| FeatureTable::new(row.features.dim()));
            t.insert(row.text, row.features).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        table.ok_or_else(|| Error::Parse {
            line: 0,
            message: "feature table is empty".into(),
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

/// Where feature vectors come from.
#[derive(Clone, Debug, PartialEq)]
pub enum FeatureSource {
    Hashed(FeatureSpec),
    Table(FeatureTable),
}

impl FeatureSource {
    pub fn dim(&self) -> usize {
        match self {
            FeatureSource::Hashed(spec) => spec.dim,
            FeatureSource::Table(t) => t.dim(),
        }
    }

    pub fn features_for(&self, text: &str) -> Result<Vector> {
        match self {
            FeatureSource::Hashed(spec) => extract_features(spec, text),
            FeatureSource::Table(t) => t
                .get(text)
                .cloned()
                .ok_or_else(|| Error::Lookup(format!("no features for text {text:?}"))),
        }
    }
}

/// A corpus record at feature level: `(class, origin features, mutant
/// features, label)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureRecord {
    pub class_id: u64,
    pub origin: Vector,
    pub mutant: Vector,
    pub label: u8,
}

/// Extracts features for every record, computing each origin once.
pub fn featurize(corpus: &Corpus, source: &FeatureSource) -> Result<Vec<FeatureRecord>> {
    let mut origins: HashMap<u64, Vector> = HashMap::new();
    corpus
        .records
        .iter()
        .map(|r| {
            let origin = match origins.get(&r.class_id) {
                Some(v) => v.clone(),
                None => {
                    let v = source.features_for(&r.origin)?;
                    origins.insert(r.class_id, v.clone());
                    v
                }
            };
            Ok(FeatureRecord {
                class_id: r.class_id,
                origin,
                mutant: source.features_for(&r.mutant)?,
                label: r.label,
            })
        })
        .collect()
}
