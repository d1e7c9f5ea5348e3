//! Synthetic mutant corpora.
//!
//! `Geometric` mode places each class origin at a random point of feature
//! space and displaces every mutant orthogonally to it by a radius drawn
//! from `noise * U(0.1, 1)`. Equivalent mutants move in an isotropic
//! direction; non-equivalent ones blend in a direction from a low-rank,
//! class-specific defect subspace with weight `shift`. Both labels share
//! one radius distribution, so raw origin distances overlap completely and
//! only an encoder that learns the defect subspace can pull them apart.
//! Features bypass text hashing and are returned as a [`FeatureTable`].
//!
//! `Codegen` mode emits small C-like functions and single-site operator
//! mutants. Mutations in live code are non-equivalent; mutations after the
//! unconditional `return`, or a post-increment of the returned local, are
//! equivalent.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, MutantRecord};
use super::features::FeatureTable;
use crate::error::{Error, Result};
use crate::math::{norm, Vector};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticMode {
    Geometric,
    Codegen,
}

impl std::str::FromStr for SyntheticMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "geometric" => Ok(SyntheticMode::Geometric),
            "codegen" => Ok(SyntheticMode::Codegen),
            other => Err(Error::Config(format!("unknown synthetic mode {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub mode: SyntheticMode,
    pub n_classes: usize,
    pub per_class: usize,
    pub equiv_fraction: f64,
    pub noise: f64,
    pub seed: u64,
    /// Geometric mode: feature dimension.
    pub feature_dim: usize,
    /// Geometric mode: weight in `[0, 1]` of the defect direction in a
    /// non-equivalent displacement.
    pub shift: f64,
    /// Geometric mode: rank of each class's defect subspace.
    pub defect_rank: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            mode: SyntheticMode::Geometric,
            n_classes: 8,
            per_class: 40,
            equiv_fraction: 0.5,
            noise: 2.0,
            seed: 0,
            feature_dim: 256,
            shift: 0.9,
            defect_rank: 1,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config(format!("n_classes must be >= 2, got {}", self.n_classes)));
        }
        if self.per_class < 4 {
            return Err(Error::Config(format!("per_class must be >= 4, got {}", self.per_class)));
        }
        if !(self.equiv_fraction > 0.0 && self.equiv_fraction < 1.0) {
            return Err(Error::Config(format!(
                "equiv_fraction must lie in (0, 1), got {}",
                self.equiv_fraction
            )));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return Err(Error::Config(format!("noise must be finite and >= 0, got {}", self.noise)));
        }
        if self.mode == SyntheticMode::Geometric {
            if self.feature_dim < 16 {
                return Err(Error::Config("feature_dim must be >= 16".into()));
            }
            if !(0.0..=1.0).contains(&self.shift) || self.defect_rank == 0 {
                return Err(Error::Config("shift must lie in [0, 1] and defect_rank >= 1".into()));
            }
        }
        Ok(())
    }

    /// Equivalent mutants per class, kept within `[1, per_class - 1]`.
    pub fn equivalents_per_class(&self) -> usize {
        ((self.per_class as f64 * self.equiv_fraction).round() as usize).clamp(1, self.per_class - 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub corpus: Corpus,
    /// Present in geometric mode only.
    pub features: Option<FeatureTable>,
}

pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    match cfg.mode {
        SyntheticMode::Geometric => geometric(cfg),
        SyntheticMode::Codegen => codegen(cfg),
    }
}

/// Per-class label sequence: the equivalent quota, shuffled.
fn class_labels(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let eq = cfg.equivalents_per_class();
    let mut labels: Vec<u8> = (0..cfg.per_class).map(|i| u8::from(i < eq)).collect();
    labels.shuffle(rng);
    labels
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

fn unit_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    let g = gaussian(rng, dim);
    let n = norm(&g);
    g.into_iter().map(|x| x / n).collect()
}

/// Removes the component of `v` along unit `u`, then normalizes.
fn orthonormal_to(v: &[f64], u: &[f64]) -> Vec<f64> {
    let along: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
    let w: Vec<f64> = v.iter().zip(u).map(|(a, b)| a - along * b).collect();
    let n = norm(&w);
    w.into_iter().map(|x| x / n).collect()
}

fn geometric(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dim = cfg.feature_dim;
    let mut table = FeatureTable::new(dim);
    let mut records = Vec::with_capacity(cfg.n_classes * cfg.per_class);
    let iso_weight = (1.0 - cfg.shift * cfg.shift).sqrt();

    for class in 0..cfg.n_classes {
        let origin = unit_gaussian(&mut rng, dim);
        let basis: Vec<Vec<f64>> = (0..cfg.defect_rank).map(|_| unit_gaussian(&mut rng, dim)).collect();
        let origin_text = format!("geo/c{class}/origin");
        table.insert(origin_text.clone(), Vector::new(origin.clone())?)?;

        for (j, label) in class_labels(cfg, &mut rng).into_iter().enumerate() {
            // every draw happens for both labels so the stream is label-independent
            let radius = cfg.noise * rng.random_range(0.1..1.0);
            let iso = orthonormal_to(&unit_gaussian(&mut rng, dim), &origin);
            let weights = gaussian(&mut rng, cfg.defect_rank);
            let direction = if label == 1 {
                iso
            } else {
                let mut defect = vec![0.0; dim];
                for (w, b) in weights.iter().zip(&basis) {
                    for (d, bi) in defect.iter_mut().zip(b) {
                        *d += w * bi;
                    }
                }
                let defect = orthonormal_to(&defect, &origin);
                let blend: Vec<f64> = iso
                    .iter()
                    .zip(&defect)
                    .map(|(i, d)| iso_weight * i + cfg.shift * d)
                    .collect();
                orthonormal_to(&blend, &origin)
            };
            let point: Vec<f64> = origin
                .iter()
                .zip(&direction)
                .map(|(o, d)| o + radius * d)
                .collect();
            let mutant_text = format!("geo/c{class}/m{j}");
            table.insert(mutant_text.clone(), Vector::new(point)?.normalized()?)?;
            records.push(MutantRecord {
                class_id: class as u64,
                label,
                origin: origin_text.clone(),
                mutant: mutant_text,
            });
        }
    }
    Ok(SyntheticCorpus {
        corpus: Corpus::new(records, format!("synthetic geometric seed={}", cfg.seed))?,
        features: Some(table),
    })
}

const VARS: [&str; 8] = ["a", "b", "n", "k", "acc", "lo", "hi", "tmp"];

#[derive(Clone, Copy, Debug)]
enum Site {
    /// statement that executes before the return
    Live,
    /// statement after the unconditional return
    Dead,
}

struct Program {
    name: String,
    /// (line text, site kind); the return line is tracked separately
    body: Vec<(String, Site)>,
    ret_var: &'static str,
    ret_index: usize,
}

impl Program {
    fn random(class: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut vars: Vec<&'static str> = VARS.to_vec();
        vars.shuffle(rng);
        let (p, q, r, s) = (vars[0], vars[1], vars[2], vars[3]);
        let ops = ["+", "-", "*"];
        let rels = ["<", "<=", ">", ">="];
        let mut pick = |xs: &[&'static str]| xs[rng.random_range(0..xs.len())];
        let (o1, o2, o3, o4, o5) = (pick(&ops), pick(&ops), pick(&ops), pick(&ops), pick(&ops));
        let rel = pick(&rels);
        let k: Vec<i32> = (0..6).map(|_| rng.random_range(1..10)).collect();

        let mut body = vec![
            (format!("int {r} = {p} {o1} {};", k[0]), Site::Live),
            (format!("int {s} = {q} {o2} {};", k[1]), Site::Live),
            (format!("if ({r} {rel} {s}) {{"), Site::Live),
            (format!("{r} = {r} {o3} {};", k[2]), Site::Live),
            ("}".to_string(), Site::Live),
            (format!("{r} = {r} {o4} {s};"), Site::Live),
        ];
        if rng.random_bool(0.5) {
            body.push((format!("{s} = {s} {o5} {};", k[3]), Site::Live));
        }
        let ret_index = body.len();
        body.push((format!("return {r};"), Site::Live));
        body.push((format!("{r} = {r} + {};", k[4]), Site::Dead));
        body.push((format!("{s} = {s} * {};", k[5]), Site::Dead));
        body.push((format!("{r} = {s} - {r};"), Site::Dead));
        Program {
            name: format!("f{class}_{}", rng.random_range(100..1000)),
            body,
            ret_var: r,
            ret_index,
        }
    }

    fn render(&self, lines: &[String]) -> String {
        let mut out = format!("int {}(int {}, int {}) {{\n", self.name, VARS[0], VARS[1]);
        let mut depth = 1;
        for l in lines {
            if l == "}" {
                depth -= 1;
            }
            out.push_str(&"    ".repeat(depth));
            out.push_str(l);
            out.push('\n');
            if l.ends_with('{') {
                depth += 1;
            }
        }
        out.push_str("}\n");
        out
    }

    fn lines(&self) -> Vec<String> {
        self.body.iter().map(|(l, _)| l.clone()).collect()
    }
}

/// Applies one operator mutation to a single line, if any applies.
fn mutate_line(line: &str, rng: &mut ChaCha8Rng) -> Option<String> {
    let tokens: Vec<&str> = line.split(' ').collect();
    let swaps: [(&str, &[&str]); 7] = [
        ("+", &["-", "*"]),
        ("-", &["+", "*"]),
        ("*", &["+", "/"]),
        ("<", &["<=", ">", "!="]),
        ("<=", &["<", ">="]),
        (">", &[">=", "<", "!="]),
        (">=", &[">", "<="]),
    ];
    let mut candidates: Vec<(usize, String)> = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        if let Some((_, alts)) = swaps.iter().find(|(op, _)| op == t) {
            for a in alts.iter() {
                candidates.push((i, a.to_string()));
            }
        }
        let bare = t.trim_end_matches(';');
        if let Ok(n) = bare.parse::<i32>() {
            let suffix = &t[bare.len()..];
            candidates.push((i, format!("{}{suffix}", n + 1)));
            candidates.push((i, format!("{}{suffix}", n - 1)));
        }
    }
    let (i, repl) = candidates.choose(rng)?.clone();
    let mut out: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
    out[i] = repl;
    Some(out.join(" "))
}

fn codegen(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut records = Vec::with_capacity(cfg.n_classes * cfg.per_class);
    for class in 0..cfg.n_classes {
        let prog = Program::random(class, &mut rng);
        let origin = prog.render(&prog.lines());
        let dead: Vec<usize> = (0..prog.body.len()).filter(|&i| matches!(prog.body[i].1, Site::Dead)).collect();
        let live: Vec<usize> = (0..prog.ret_index).filter(|&i| prog.body[i].0 != "}").collect();
        for label in class_labels(cfg, &mut rng) {
            let mut lines = prog.lines();
            if label == 1 {
                // post-increment of the returned local, or any dead-code mutation
                let choice = rng.random_range(0..=dead.len());
                if choice == dead.len() {
                    lines[prog.ret_index] = format!("return {}++;", prog.ret_var);
                } else {
                    let i = dead[choice];
                    lines[i] = mutate_line(&lines[i], &mut rng).expect("dead lines carry operators");
                }
            } else {
                loop {
                    let i = live[rng.random_range(0..live.len())];
                    if let Some(m) = mutate_line(&lines[i], &mut rng) {
                        lines[i] = m;
                        break;
                    }
                }
            }
            records.push(MutantRecord {
                class_id: class as u64,
                label,
                origin: origin.clone(),
                mutant: prog.render(&lines),
            });
        }
    }
    Ok(SyntheticCorpus {
        corpus: Corpus::new(records, format!("synthetic codegen seed={}", cfg.seed))?,
        features: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::cosine_distance;

    fn raw_distances(cfg: &SyntheticConfig) -> Vec<(u8, f64)> {
        let syn = generate_synthetic(cfg).unwrap();
        let table = syn.features.unwrap();
        syn.corpus
            .records
            .iter()
            .map(|r| {
                let d = cosine_distance(
                    table.get(&r.origin).unwrap().as_slice(),
                    table.get(&r.mutant).unwrap().as_slice(),
                )
                .unwrap();
                (r.label, d)
            })
            .collect()
    }

    #[test]
    fn noiseless_mutants_sit_on_origin() {
        let cfg = SyntheticConfig { noise: 0.0, ..SyntheticConfig::default() };
        assert!(raw_distances(&cfg).iter().all(|&(_, d)| d < 1e-12));
    }

    #[test]
    fn raw_distance_ignores_label_and_shift() {
        let base = SyntheticConfig { seed: 3, ..SyntheticConfig::default() };
        let a = raw_distances(&SyntheticConfig { shift: 0.0, ..base.clone() });
        let b = raw_distances(&SyntheticConfig { shift: 1.0, ..base });
        for ((la, da), (lb, db)) in a.iter().zip(&b) {
            assert_eq!(la, lb);
            assert!((da - db).abs() < 1e-12);
            // orthogonal displacement by r gives 1 - (1 + 1/sqrt(1 + r^2)) / 2
            assert!(*da > 0.0 && *da < 0.5);
        }
    }

    #[test]
    fn generation_is_seeded() {
        for mode in [SyntheticMode::Geometric, SyntheticMode::Codegen] {
            let cfg = SyntheticConfig { mode, seed: 5, ..SyntheticConfig::default() };
            let a = generate_synthetic(&cfg).unwrap();
            let b = generate_synthetic(&cfg).unwrap();
            assert_eq!(a, b);
            assert_eq!(a.corpus.len(), 320);
            assert_eq!(a.corpus.label_counts(), [160, 160]);
            let other = generate_synthetic(&SyntheticConfig { seed: 6, ..cfg }).unwrap();
            assert_ne!(a.corpus.records, other.corpus.records);
        }
    }

    #[test]
    fn codegen_labels_follow_reachability() {
        let cfg = SyntheticConfig { mode: SyntheticMode::Codegen, seed: 2, ..SyntheticConfig::default() };
        let syn = generate_synthetic(&cfg).unwrap();
        for r in &syn.corpus.records {
            let o: Vec<&str> = r.origin.lines().collect();
            let m: Vec<&str> = r.mutant.lines().collect();
            assert_eq!(o.len(), m.len());
            let changed: Vec<usize> = (0..o.len()).filter(|&i| o[i] != m[i]).collect();
            assert_eq!(changed.len(), 1, "exactly one mutated line");
            let ret = o.iter().position(|l| l.trim_start().starts_with("return")).unwrap();
            let i = changed[0];
            if r.label == 1 {
                assert!(i > ret || (i == ret && m[i].contains("++")));
            } else {
                assert!(i < ret);
            }
        }
    }

    #[test]
    fn mutation_after_return_is_equivalent() {
        let cfg = SyntheticConfig { mode: SyntheticMode::Codegen, seed: 11, ..SyntheticConfig::default() };
        let syn = generate_synthetic(&cfg).unwrap();
        let after_return = syn.corpus.records.iter().filter(|r| {
            let o: Vec<&str> = r.origin.lines().collect();
            let ret = o.iter().position(|l| l.trim_start().starts_with("return")).unwrap();
            r.mutant.lines().enumerate().any(|(i, l)| i > ret && l != o[i])
        });
        let mut n = 0;
        for r in after_return {
            assert_eq!(r.label, 1);
            n += 1;
        }
        assert!(n > 0);
    }

    #[test]
    fn invalid_sizes_rejected() {
        let base = SyntheticConfig::default();
        for bad in [
            SyntheticConfig { n_classes: 1, ..base.clone() },
            SyntheticConfig { per_class: 3, ..base.clone() },
            SyntheticConfig { equiv_fraction: 1.0, ..base.clone() },
            SyntheticConfig { noise: -1.0, ..base.clone() },
            SyntheticConfig { shift: 1.5, ..base.clone() },
        ] {
            assert!(matches!(generate_synthetic(&bad), Err(Error::Config(_))));
        }
    }
}
