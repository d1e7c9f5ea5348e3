//! Per-class positive and negative verges.
//!
//! A verge is an exponential moving average of origin-to-mutant distances
//! for one class: the positive verge tracks equivalent mutants, the
//! negative verge tracks non-equivalent ones. Verges are statistics, not
//! trainable parameters; callers read them as constants when computing
//! the loss.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::EmbeddedSample;
use crate::math::{cosine_distance, ema_batch, EmaParams};

const SNAPSHOT_MAGIC: &str = "cpl-verges";
const SNAPSHOT_VERSION: u32 = 1;
const RANGE_TOLERANCE: f64 = 1e-9;

/// How the first observation of a verge is folded in.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VergeInit {
    /// Seed with the first distance, then run the batch update over the
    /// whole tuple including that first distance.
    #[default]
    Literal,
    /// Seed with the first distance and update over the remainder only.
    ExcludeFirst,
}

impl VergeInit {
    pub fn as_str(self) -> &'static str {
        match self {
            VergeInit::Literal => "literal",
            VergeInit::ExcludeFirst => "exclude-first",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "literal" => Some(VergeInit::Literal),
            "exclude-first" => Some(VergeInit::ExcludeFirst),
            _ => None,
        }
    }
}

impl std::fmt::Display for VergeInit {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for VergeInit {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        VergeInit::parse(s).ok_or_else(|| Error::Config(format!("unknown verge init rule {s:?}")))
    }
}

/// Verges of one class. `None` means the verge has never been observed.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct VergeState {
    pub v_plus: Option<f64>,
    pub v_minus: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VergeRegistry {
    states: BTreeMap<u64, VergeState>,
    params: EmaParams,
    init: VergeInit,
}

fn validate_distances(ds: &[f64]) -> Result<()> {
    for &d in ds {
        if !(-RANGE_TOLERANCE..=1.0 + RANGE_TOLERANCE).contains(&d) {
            return Err(Error::Range(format!("distance {d} outside [0, 1]")));
        }
    }
    Ok(())
}

fn update_verge(
    verge: Option<f64>,
    ds: &[f64],
    params: EmaParams,
    init: VergeInit,
) -> Result<Option<f64>> {
    let Some(&first) = ds.first() else {
        return Ok(verge);
    };
    let clamp = |d: f64| d.clamp(0.0, 1.0);
    let ds: Vec<f64> = ds.iter().copied().map(clamp).collect();
    let (start, rest) = match (verge, init) {
        (Some(v), _) => (v, &ds[..]),
        (None, VergeInit::Literal) => (clamp(first), &ds[..]),
        (None, VergeInit::ExcludeFirst) => (clamp(first), &ds[1..]),
    };
    if rest.is_empty() {
        return Ok(Some(start));
    }
    Ok(Some(ema_batch(start, rest, params)?.clamp(0.0, 1.0)))
}

impl VergeRegistry {
    pub fn new(params: EmaParams) -> Self {
        Self::with_init(params, VergeInit::Literal)
    }

    pub fn with_init(params: EmaParams, init: VergeInit) -> Self {
        VergeRegistry {
            states: BTreeMap::new(),
            params,
            init,
        }
    }

    pub fn params(&self) -> EmaParams {
        self.params
    }

    pub fn init_rule(&self) -> VergeInit {
        self.init
    }

    pub fn get(&self, class_id: u64) -> Option<&VergeState> {
        self.states.get(&class_id)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u64, &VergeState)> {
        self.states.iter().map(|(k, v)| (*k, v))
    }

    /// Overwrites the state of one class.
    pub fn set(&mut self, class_id: u64, state: VergeState) -> Result<()> {
        for v in [state.v_plus, state.v_minus].into_iter().flatten() {
            validate_distances(&[v])?;
        }
        self.states.insert(class_id, state);
        Ok(())
    }

    /// Folds the ordered equivalent (`pos`) and non-equivalent (`neg`)
    /// distances of one class into its verges. An empty tuple leaves the
    /// corresponding verge untouched. Nothing is modified on error.
    pub fn update_class(&mut self, class_id: u64, pos: &[f64], neg: &[f64]) -> Result<VergeState> {
        validate_distances(pos)?;
        validate_distances(neg)?;
        if pos.is_empty() && neg.is_empty() {
            return Ok(self.states.get(&class_id).copied().unwrap_or_default());
        }
        let current = self.states.get(&class_id).copied().unwrap_or_default();
        let next = VergeState {
            v_plus: update_verge(current.v_plus, pos, self.params, self.init)?,
            v_minus: update_verge(current.v_minus, neg, self.params, self.init)?,
        };
        self.states.insert(class_id, next);
        Ok(next)
    }

    /// Updates verges from precomputed `(class_id, label, distance)` rows,
    /// consumed in the given order. Returns the set of classes touched.
    pub fn update_from_distances(&mut self, rows: &[(u64, u8, f64)]) -> Result<BTreeSet<u64>> {
        if rows.is_empty() {
            return Err(Error::EmptyBatch("verge update needs a non-empty batch".into()));
        }
        let mut grouped: BTreeMap<u64, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
        for &(class, label, d) in rows {
            let entry = grouped.entry(class).or_default();
            if label == 1 {
                entry.0.push(d);
            } else {
                entry.1.push(d);
            }
        }
        // validate everything first so a bad row cannot leave a half-applied batch
        for (pos, neg) in grouped.values() {
            validate_distances(pos)?;
            validate_distances(neg)?;
        }
        for (class, (pos, neg)) in &grouped {
            self.update_class(*class, pos, neg)?;
        }
        Ok(grouped.into_keys().collect())
    }

    /// Collects the unique classes of a minibatch and updates each class
    /// from the distances of its samples, in batch order.
    pub fn batch_update(&mut self, batch: &[EmbeddedSample]) -> Result<BTreeSet<u64>> {
        let rows = batch
            .iter()
            .map(|s| {
                let d = cosine_distance(s.origin.as_slice(), s.mutant.as_slice())?;
                Ok((s.class_id, s.label, d))
            })
            .collect::<Result<Vec<_>>>()?;
        self.update_from_distances(&rows)
    }

    /// Line-oriented text snapshot carrying gamma, the init rule and every
    /// class's verges (`-` marks an uninitialized verge).
    pub fn snapshot(&self) -> Vec<u8> {
        let mut out = String::new();
        let fmt_opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| x.to_string());
        let _ = writeln!(out, "{SNAPSHOT_MAGIC} {SNAPSHOT_VERSION}");
        let _ = writeln!(out, "gamma {}", self.params.gamma());
        let _ = writeln!(out, "init {}", self.init.as_str());
        let _ = writeln!(out, "classes {}", self.states.len());
        for (class, st) in &self.states {
            let _ = writeln!(out, "{class} {} {}", fmt_opt(st.v_plus), fmt_opt(st.v_minus));
        }
        out.into_bytes()
    }

    pub fn restore(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Deserialize(format!("verge snapshot: {msg}"));
        let text = std::str::from_utf8(bytes).map_err(|_| bad("not UTF-8"))?;
        let mut lines = text.lines();

        let header = lines.next().ok_or_else(|| bad("empty"))?;
        let version = header
            .strip_prefix(SNAPSHOT_MAGIC)
            .map(str::trim)
            .ok_or_else(|| bad("missing header"))?;
        if version != SNAPSHOT_VERSION.to_string() {
            return Err(Error::Version(format!("verge snapshot version {version}")));
        }

        let mut field = |key: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| bad("truncated"))?;
            line.strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .map(str::to_string)
                .ok_or_else(|| bad(&format!("expected `{key}`")))
        };
        let gamma: f64 = field("gamma")?.parse().map_err(|_| bad("bad gamma"))?;
        let init = VergeInit::parse(&field("init")?).ok_or_else(|| bad("bad init rule"))?;
        let count: usize = field("classes")?.parse().map_err(|_| bad("bad class count"))?;
        let params = EmaParams::new(gamma).map_err(|_| bad("gamma out of range"))?;

        let parse_opt = |s: &str| -> Result<Option<f64>> {
            if s == "-" {
                return Ok(None);
            }
            let v: f64 = s.parse().map_err(|_| bad("bad verge value"))?;
            if !(0.0..=1.0).contains(&v) {
                return Err(bad("verge outside [0, 1]"));
            }
            Ok(Some(v))
        };
        let mut states = BTreeMap::new();
        for _ in 0..count {
            let line = lines.next().ok_or_else(|| bad("truncated class list"))?;
            let parts: Vec<&str> = line.split(' ').collect();
            let [class, plus, minus] = parts[..] else {
                return Err(bad("class line needs three fields"));
            };
            let class: u64 = class.parse().map_err(|_| bad("bad class id"))?;
            let state = VergeState {
                v_plus: parse_opt(plus)?,
                v_minus: parse_opt(minus)?,
            };
            if states.insert(class, state).is_some() {
                return Err(bad("duplicate class"));
            }
        }
        if lines.any(|l| !l.trim().is_empty()) {
            return Err(bad("trailing data"));
        }
        Ok(VergeRegistry {
            states,
            params,
            init,
        })
    }
}
