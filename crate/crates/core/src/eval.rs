//! Classification metrics, distance statistics, permutation tests,
//! hyperparameter sweeps and embedding export.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Corpus, FeatureRecord, FeatureSource};
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::math::cosine_distance;
use crate::trainer::{train, TrainConfig};

/// Confusion counts with "equivalent" (label 1) as the positive class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    /// `None` when nothing was predicted positive.
    pub precision: Option<f64>,
    /// `None` when there are no positives.
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl EvalReport {
    pub fn from_counts(tp: usize, fp: usize, tn: usize, fn_: usize) -> Self {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        EvalReport {
            tp,
            fp,
            tn,
            fn_,
            precision,
            recall,
            f1,
        }
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn accuracy(&self) -> Option<f64> {
        let n = self.total();
        (n > 0).then(|| (self.tp + self.tn) as f64 / n as f64)
    }
}

fn check_feature_dim(model: &Model, data: &[FeatureRecord]) -> Result<()> {
    if let Some(r) = data.first() {
        if r.origin.dim() != model.dims.feature_dim {
            return Err(Error::Dimension {
                expected: model.dims.feature_dim,
                actual: r.origin.dim(),
            });
        }
    }
    Ok(())
}

/// Predicted label of one pair; ties go to label 0.
pub fn predict(model: &Model, record: &FeatureRecord) -> Result<u8> {
    let o = model.encoder.encode(record.origin.as_slice())?;
    let s = model.encoder.encode(record.mutant.as_slice())?;
    let logits = model.classifier.classify_pair(&o, &s)?;
    Ok(u8::from(logits[1] > logits[0]))
}

pub fn evaluate(model: &Model, data: &[FeatureRecord]) -> Result<EvalReport> {
    if data.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    check_feature_dim(model, data)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for r in data {
        match (predict(model, r)?, r.label) {
            (1, 1) => tp += 1,
            (1, _) => fp += 1,
            (_, 1) => fn_ += 1,
            _ => tn += 1,
        }
    }
    Ok(EvalReport::from_counts(tp, fp, tn, fn_))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator); 0 for a single value.
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::EmptyBatch("no values to summarize".into()));
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Ok(Summary { n, mean, std })
    }
}

/// Origin-to-mutant embedding distances grouped by label.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceStats {
    pub equivalent: Summary,
    pub non_equivalent: Summary,
    /// Non-equivalent mean over equivalent mean; `None` when the equivalent
    /// mean is 0.
    pub ratio: Option<f64>,
    pub equivalent_distances: Vec<f64>,
    pub non_equivalent_distances: Vec<f64>,
}

pub fn distance_stats(model: &Model, data: &[FeatureRecord]) -> Result<DistanceStats> {
    check_feature_dim(model, data)?;
    let mut eq = Vec::new();
    let mut neq = Vec::new();
    for r in data {
        let o = model.encoder.encode(r.origin.as_slice())?;
        let s = model.encoder.encode(r.mutant.as_slice())?;
        let d = cosine_distance(o.as_slice(), s.as_slice())?;
        if r.label == 1 {
            eq.push(d);
        } else {
            neq.push(d);
        }
    }
    if eq.is_empty() || neq.is_empty() {
        return Err(Error::Stratify(format!(
            "need both labels, got {} equivalent and {} non-equivalent",
            eq.len(),
            neq.len()
        )));
    }
    let equivalent = Summary::of(&eq)?;
    let non_equivalent = Summary::of(&neq)?;
    let ratio = (equivalent.mean > 0.0).then(|| non_equivalent.mean / equivalent.mean);
    Ok(DistanceStats {
        equivalent,
        non_equivalent,
        ratio,
        equivalent_distances: eq,
        non_equivalent_distances: neq,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PermutationResult {
    /// `mean(a) - mean(b)`.
    pub observed: f64,
    /// Two-sided, `(extreme + 1) / (resamples + 1)`.
    pub p_value: f64,
    pub resamples: usize,
}

pub const DEFAULT_RESAMPLES: usize = 10_000;

/// Two-sample permutation test on the difference of means.
pub fn permutation_test(a: &[f64], b: &[f64], resamples: usize, seed: u64) -> Result<PermutationResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyBatch("permutation test needs two non-empty samples".into()));
    }
    if resamples == 0 {
        return Err(Error::Config("resamples must be >= 1".into()));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let observed = mean(a) - mean(b);
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // tolerance keeps ties with the observed statistic counted as extreme
    let threshold = observed.abs() - 1e-12;
    let mut extreme = 0usize;
    for _ in 0..resamples {
        pooled.shuffle(&mut rng);
        let (pa, pb) = pooled.split_at(a.len());
        if (mean(pa) - mean(pb)).abs() >= threshold {
            extreme += 1;
        }
    }
    Ok(PermutationResult {
        observed,
        p_value: (extreme + 1) as f64 / (resamples + 1) as f64,
        resamples,
    })
}

/// `start, start + step, ...` up to `end` inclusive, rounded to 10 decimal
/// places so that e.g. `-0.06 + 6 * 0.01` prints as `0`.
pub fn grid_values(start: f64, end: f64, step: f64) -> Result<Vec<f64>> {
    if step.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || !start.is_finite() || !end.is_finite() || end < start {
        return Err(Error::Config(format!("invalid grid {start}..={end} step {step}")));
    }
    let n = ((end - start) / step + 1e-9).floor() as usize;
    Ok((0..=n)
        .map(|i| {
            let v = ((start + i as f64 * step) * 1e10).round() / 1e10;
            if v == 0.0 {
                0.0
            } else {
                v
            }
        })
        .collect())
}

/// Standard lambda x zeta grids.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GridPreset {
    /// lambda 1.00..=1.30 step 0.05, zeta -0.06..=0.01 step 0.01 (56 cells).
    Cpl,
    /// lambda 1.00..=1.30 step 0.05, zeta 0.03..=0.18 step 0.03 (42 cells).
    Contrastive,
}

impl GridPreset {
    /// `(lambdas, zetas)`.
    pub fn values(self) -> (Vec<f64>, Vec<f64>) {
        let grid = |a, b, s| grid_values(a, b, s).expect("preset grid is valid");
        let lambdas = grid(1.0, 1.3, 0.05);
        let zetas = match self {
            GridPreset::Cpl => grid(-0.06, 0.01, 0.01),
            GridPreset::Contrastive => grid(0.03, 0.18, 0.03),
        };
        (lambdas, zetas)
    }
}

impl std::str::FromStr for GridPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cpl" => Ok(GridPreset::Cpl),
            "contrastive" => Ok(GridPreset::Contrastive),
            other => Err(Error::Config(format!("unknown grid preset {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellError {
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub lambda: f64,
    pub zeta: f64,
    pub outcome: std::result::Result<EvalReport, CellError>,
}

/// Grid of sweep results, rows by lambda and columns by zeta.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub lambdas: Vec<f64>,
    pub zetas: Vec<f64>,
    pub cells: Vec<SweepCell>,
}

/// Trains `base` with one `(lambda, zeta)` override and evaluates on `test`.
pub fn run_cell(base: &TrainConfig, train_set: &[FeatureRecord], test: &[FeatureRecord], lambda: f64, zeta: f64) -> Result<EvalReport> {
    let mut cfg = base.clone();
    cfg.loss.lambda = lambda;
    cfg.loss.zeta = zeta;
    let ckpt = train(&cfg, train_set).result?;
    evaluate(&ckpt.model, test)
}

/// Runs every cell of `lambdas x zetas` on up to `workers` threads. A
/// failing cell is recorded in the grid rather than aborting the sweep.
/// The result does not depend on `workers`.
pub fn sweep(
    base: &TrainConfig,
    train_set: &[FeatureRecord],
    test: &[FeatureRecord],
    lambdas: &[f64],
    zetas: &[f64],
    workers: usize,
) -> Result<SweepGrid> {
    if lambdas.is_empty() || zetas.is_empty() {
        return Err(Error::Config("sweep grid is empty".into()));
    }
    if workers == 0 {
        return Err(Error::Config("workers must be >= 1".into()));
    }
    base.validate()?;
    let coords: Vec<(f64, f64)> = lambdas
        .iter()
        .flat_map(|&l| zetas.iter().map(move |&z| (l, z)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let cells = pool.install(|| {
        coords
            .par_iter()
            .map(|&(lambda, zeta)| SweepCell {
                lambda,
                zeta,
                outcome: run_cell(base, train_set, test, lambda, zeta).map_err(|e| CellError {
                    kind: e.name().to_string(),
                    message: e.to_string(),
                }),
            })
            .collect()
    });
    Ok(SweepGrid {
        lambdas: lambdas.to_vec(),
        zetas: zetas.to_vec(),
        cells,
    })
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{:.2}", 100.0 * x))
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x}"))
}

impl SweepGrid {
    pub fn cell(&self, lambda_index: usize, zeta_index: usize) -> &SweepCell {
        &self.cells[lambda_index * self.zetas.len() + zeta_index]
    }

    /// Highest F1, then highest precision, then the lower `(lambda, zeta)`.
    pub fn best(&self) -> Option<&SweepCell> {
        let key = |c: &SweepCell| match &c.outcome {
            Ok(r) => Some((r.f1.unwrap_or(-1.0), r.precision.unwrap_or(-1.0))),
            Err(_) => None,
        };
        let mut best: Option<&SweepCell> = None;
        for c in &self.cells {
            let Some(k) = key(c) else { continue };
            let better = match best {
                None => true,
                Some(b) => {
                    let bk = key(b).expect("best cell succeeded");
                    k.0 > bk.0
                        || (k.0 == bk.0 && k.1 > bk.1)
                        || (k == bk && (c.lambda, c.zeta) < (b.lambda, b.zeta))
                }
            };
            if better {
                best = Some(c);
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("lambda,zeta,tp,fp,tn,fn,precision,recall,f1,error\n");
        for c in &self.cells {
            match &c.outcome {
                Ok(r) => writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},",
                    c.lambda,
                    c.zeta,
                    r.tp,
                    r.fp,
                    r.tn,
                    r.fn_,
                    opt_num(r.precision),
                    opt_num(r.recall),
                    opt_num(r.f1)
                ),
                Err(e) => writeln!(out, "{},{},,,,,,,,{}", c.lambda, c.zeta, e.kind),
            }
            .expect("writing to a String");
        }
        out
    }

    /// Aligned `precision/recall/F1` (percent) matrix, lambda rows by zeta
    /// columns.
    pub fn to_matrix_text(&self) -> String {
        let render = |c: &SweepCell| match &c.outcome {
            Ok(r) => format!("{}/{}/{}", pct(r.precision), pct(r.recall), pct(r.f1)),
            Err(e) => e.kind.clone(),
        };
        let width = self
            .cells
            .iter()
            .map(|c| render(c).len())
            .chain(self.zetas.iter().map(|z| format!("{z}").len()))
            .max()
            .unwrap_or(0);
        let mut out = format!("{:>8}", "l \\ z");
        for z in &self.zetas {
            write!(out, "  {:>width$}", format!("{z}")).expect("writing to a String");
        }
        out.push('\n');
        for (li, l) in self.lambdas.iter().enumerate() {
            write!(out, "{:>8}", format!("{l}")).expect("writing to a String");
            for zi in 0..self.zetas.len() {
                write!(out, "  {:>width$}", render(self.cell(li, zi))).expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }
}

/// CSV of embeddings: for each requested class (all when `classes` is
/// empty), one origin row with an empty label followed by its mutant rows
/// in corpus order. Columns: `class_id,role,label,e0..`.
pub fn export_embeddings(model: &Model, corpus: &Corpus, source: &FeatureSource, classes: &[u64]) -> Result<String> {
    if source.dim() != model.dims.feature_dim {
        return Err(Error::Dimension {
            expected: model.dims.feature_dim,
            actual: source.dim(),
        });
    }
    let origins = corpus.origins();
    let wanted: Vec<u64> = if classes.is_empty() {
        origins.keys().copied().collect()
    } else {
        let mut c = classes.to_vec();
        c.sort_unstable();
        c.dedup();
        if let Some(missing) = c.iter().find(|id| !origins.contains_key(id)) {
            return Err(Error::Lookup(format!("class {missing} is not in the corpus")));
        }
        c
    };
    let mut by_class: BTreeMap<u64, Vec<(&str, u8)>> = BTreeMap::new();
    for r in &corpus.records {
        by_class.entry(r.class_id).or_default().push((&r.mutant, r.label));
    }
    let mut out = String::from("class_id,role,label");
    for i in 0..model.dims.embed_dim {
        write!(out, ",e{i}").expect("writing to a String");
    }
    out.push('\n');
    let row = |out: &mut String, class: u64, role: &str, label: Option<u8>, text: &str| -> Result<()> {
        let e = model.encoder.encode(source.features_for(text)?.as_slice())?;
        write!(out, "{class},{role},{}", label.map_or_else(String::new, |l| l.to_string()))
            .expect("writing to a String");
        for v in e.as_slice() {
            write!(out, ",{v}").expect("writing to a String");
        }
        out.push('\n');
        Ok(())
    };
    for class in wanted {
        row(&mut out, class, "origin", None, origins[&class])?;
        for &(text, label) in by_class.get(&class).map(Vec::as_slice).unwrap_or(&[]) {
            row(&mut out, class, "mutant", Some(label), text)?;
        }
    }
    Ok(out)
}
