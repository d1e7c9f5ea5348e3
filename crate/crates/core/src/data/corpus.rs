use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One corpus row: a mutant of the origin program of class `class_id`,
/// labeled 1 when equivalent to that origin.
///
/// Field order here is the on-disk field order.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MutantRecord {
    pub class_id: u64,
    pub label: u8,
    pub origin: String,
    pub mutant: String,
}

impl MutantRecord {
    fn check(&self) -> std::result::Result<(), String> {
        if self.label > 1 {
            return Err(format!("label must be 0 or 1, got {}", self.label));
        }
        if self.origin.is_empty() || self.mutant.is_empty() {
            return Err("origin and mutant texts must be non-empty".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Corpus {
    pub records: Vec<MutantRecord>,
    pub provenance: String,
}

impl Corpus {
    /// Builds a corpus, validating every record and the rule that all
    /// records of one class share the same origin text.
    pub fn new(records: Vec<MutantRecord>, provenance: impl Into<String>) -> Result<Self> {
        for r in &records {
            r.check().map_err(Error::Schema)?;
        }
        check_origins(&records)?;
        Ok(Corpus {
            records,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn label_counts(&self) -> [usize; 2] {
        let mut counts = [0, 0];
        for r in &self.records {
            counts[r.label as usize] += 1;
        }
        counts
    }

    /// Origin text of each class, ordered by class id.
    pub fn origins(&self) -> BTreeMap<u64, &str> {
        self.records
            .iter()
            .map(|r| (r.class_id, r.origin.as_str()))
            .collect()
    }

    /// Parses the line-delimited JSON corpus format.
    pub fn parse(text: &str, provenance: impl Into<String>) -> Result<Self> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let record: MutantRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })?;
            record.check().map_err(|message| Error::Parse { line: i + 1, message })?;
            records.push(record);
        }
        check_origins(&records)?;
        Ok(Corpus {
            records,
            provenance: provenance.into(),
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            // MutantRecord serialization cannot fail
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_jsonl())?;
        Ok(())
    }
}

fn check_origins(records: &[MutantRecord]) -> Result<()> {
    let mut origins: BTreeMap<u64, &str> = BTreeMap::new();
    for r in records {
        match origins.get(&r.class_id) {
            Some(o) if *o != r.origin => {
                return Err(Error::Schema(format!(
                    "class {} has more than one origin text",
                    r.class_id
                )))
            }
            Some(_) => {}
            None => {
                origins.insert(r.class_id, &r.origin);
            }
        }
    }
    Ok(())
}

pub fn ingest(path: &Path) -> Result<Corpus> {
    let text = fs::read_to_string(path)?;
    Corpus::parse(&text, path.display().to_string())
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Drops records whose whitespace-normalized (origin, mutant) pair repeats
/// an earlier one. Keeps the first occurrence and the original order.
pub fn dedup(corpus: &Corpus) -> Corpus {
    let mut seen = HashSet::new();
    let records = corpus
        .records
        .iter()
        .filter(|r| seen.insert((normalize_ws(&r.origin), normalize_ws(&r.mutant))))
        .cloned()
        .collect();
    Corpus {
        records,
        provenance: corpus.provenance.clone(),
    }
}

/// Label-stratified split. Each label contributes `round(n * fraction)` of
/// its records to the first (train) side; both sides keep corpus order.
pub fn split(corpus: &Corpus, fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("split fraction must lie in (0, 1), got {fraction}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut in_train = vec![false; corpus.len()];
    for label in [0u8, 1] {
        let mut idx: Vec<usize> = corpus
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.label == label)
            .map(|(i, _)| i)
            .collect();
        if idx.is_empty() {
            return Err(Error::Stratify(format!("no records with label {label}")));
        }
        idx.shuffle(&mut rng);
        let take = (idx.len() as f64 * fraction).round() as usize;
        for &i in &idx[..take] {
            in_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (r, t) in corpus.records.iter().zip(in_train) {
        if t {
            train.push(r.clone());
        } else {
            test.push(r.clone());
        }
    }
    let side = |records, name: &str| Corpus {
        records,
        provenance: format!("{} [{name} split, fraction {fraction}, seed {seed}]", corpus.provenance),
    };
    Ok((side(train, "train"), side(test, "test")))
}
