//! `cpl`: command-line driver for the metric-learning lab.
//!
//! Every command computes its outputs in memory, then writes them together
//! with `manifest.txt` into `--out`. Nothing is written when a command
//! fails, and an output that would overwrite one of the inputs is refused.

mod manifest;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cpl_core::data::{
    dedup, featurize, generate_synthetic, ingest, split, FeatureSource, FeatureSpec, FeatureTable, SyntheticConfig,
    SyntheticMode,
};
use cpl_core::encoder::{Model, ModelDims};
use cpl_core::eval::{
    distance_stats, evaluate, export_embeddings, permutation_test, sweep, DistanceStats, GridPreset, DEFAULT_RESAMPLES,
};
use cpl_core::losses::LossConfig;
use cpl_core::optim::AdamConfig;
use cpl_core::trainer::{train, Checkpoint, LossKind, TrainConfig};
use cpl_core::verge::VergeInit;
use cpl_core::{Error, Result};
use serde_json::json;

use manifest::Manifest;

const MANIFEST_FILE: &str = "manifest.txt";

#[derive(Parser, Debug)]
#[command(name = "cpl", version, about = "Cluster Purge Loss training lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Ingest a corpus, drop duplicate records and write a stratified split.
    Preprocess(PreprocessArgs),
    /// Generate a synthetic corpus.
    Gen(GenArgs),
    /// Train a model and write its checkpoint and epoch history.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a corpus.
    Eval(EvalArgs),
    /// Train and evaluate every cell of a (lambda, zeta) grid.
    Sweep(SweepArgs),
    /// Embedding distance statistics, optionally against a baseline.
    Stats(StatsArgs),
    /// Export origin and mutant embeddings as CSV.
    Export(ExportArgs),
    /// Re-run a command from its manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// 0 prints a one-line summary, 1 adds per-epoch lines.
    #[arg(long, default_value_t = 0)]
    verbosity: u8,
}

#[derive(Args, Debug)]
struct FeatureArgs {
    /// Feature table (JSON lines); when absent, features are hashed n-grams.
    #[arg(long)]
    features: Option<PathBuf>,
    /// Hashed feature dimension.
    #[arg(long, default_value_t = FeatureSpec::default().dim)]
    feature_dim: usize,
    /// Hashed n-gram orders.
    #[arg(long, value_delimiter = ',', default_value = "1,2")]
    ngrams: Vec<usize>,
}

impl FeatureArgs {
    fn source(&self) -> Result<FeatureSource> {
        match &self.features {
            Some(p) => Ok(FeatureSource::Table(FeatureTable::read(p)?)),
            None => {
                let spec = FeatureSpec {
                    dim: self.feature_dim,
                    ngram_orders: self.ngrams.clone(),
                    ..FeatureSpec::default()
                };
                spec.validate()?;
                Ok(FeatureSource::Hashed(spec))
            }
        }
    }

    fn record(&self, m: &mut Manifest) {
        m.set_opt_path("features", self.features.as_deref());
        m.set("feature-dim", self.feature_dim);
        m.set_list("ngrams", &self.ngrams);
    }

    fn inputs(&self) -> Vec<&Path> {
        self.features.iter().map(PathBuf::as_path).collect()
    }
}

#[derive(Args, Debug)]
struct TrainFlags {
    #[arg(long, default_value_t = LossKind::CePlusCpl)]
    loss_kind: LossKind,
    /// EMA window of the verges.
    #[arg(long, default_value_t = LossConfig::default().gamma)]
    gamma: f64,
    /// Exponent on the equivalent-side hinge.
    #[arg(long, default_value_t = LossConfig::default().alpha)]
    alpha: f64,
    /// Exponent on the non-equivalent-side hinge.
    #[arg(long, default_value_t = LossConfig::default().beta)]
    beta: f64,
    /// Hinge margin.
    #[arg(long, default_value_t = LossConfig::default().zeta, allow_negative_numbers = true)]
    zeta: f64,
    /// Weight of the metric loss in the joint objective.
    #[arg(long, default_value_t = LossConfig::default().lambda, allow_negative_numbers = true)]
    lambda: f64,
    #[arg(long, default_value_t = LossConfig::default().hinge_epsilon)]
    hinge_epsilon: f64,
    #[arg(long, default_value_t = TrainConfig::default().epochs)]
    epochs: usize,
    #[arg(long, default_value_t = TrainConfig::default().batch_size)]
    batch_size: usize,
    #[arg(long, default_value_t = AdamConfig::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = AdamConfig::default().beta1)]
    adam_beta1: f64,
    #[arg(long, default_value_t = AdamConfig::default().beta2)]
    adam_beta2: f64,
    #[arg(long, default_value_t = AdamConfig::default().eps)]
    adam_eps: f64,
    #[arg(long, default_value_t = ModelDims::default().hidden_dim)]
    hidden_dim: usize,
    #[arg(long, default_value_t = ModelDims::default().embed_dim)]
    embed_dim: usize,
    #[arg(long, default_value_t = ModelDims::default().head_hidden_dim)]
    head_hidden_dim: usize,
    #[arg(long, default_value_t = VergeInit::default())]
    verge_init: VergeInit,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl TrainFlags {
    fn config(&self, feature_dim: usize) -> TrainConfig {
        TrainConfig {
            loss_kind: self.loss_kind,
            loss: LossConfig {
                gamma: self.gamma,
                alpha: self.alpha,
                beta: self.beta,
                zeta: self.zeta,
                lambda: self.lambda,
                hinge_epsilon: self.hinge_epsilon,
            },
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: AdamConfig {
                learning_rate: self.learning_rate,
                beta1: self.adam_beta1,
                beta2: self.adam_beta2,
                eps: self.adam_eps,
            },
            seed: self.seed,
            dims: ModelDims {
                feature_dim,
                hidden_dim: self.hidden_dim,
                embed_dim: self.embed_dim,
                head_hidden_dim: self.head_hidden_dim,
            },
            verge_init: self.verge_init,
            trace_steps: false,
        }
    }

    fn record(&self, m: &mut Manifest) {
        m.set("loss-kind", self.loss_kind);
        m.set("gamma", self.gamma);
        m.set("alpha", self.alpha);
        m.set("beta", self.beta);
        m.set("zeta", self.zeta);
        m.set("lambda", self.lambda);
        m.set("hinge-epsilon", self.hinge_epsilon);
        m.set("epochs", self.epochs);
        m.set("batch-size", self.batch_size);
        m.set("learning-rate", self.learning_rate);
        m.set("adam-beta1", self.adam_beta1);
        m.set("adam-beta2", self.adam_beta2);
        m.set("adam-eps", self.adam_eps);
        m.set("hidden-dim", self.hidden_dim);
        m.set("embed-dim", self.embed_dim);
        m.set("head-hidden-dim", self.head_hidden_dim);
        m.set("verge-init", self.verge_init);
        m.set("seed", self.seed);
    }
}

#[derive(Args, Debug)]
struct PreprocessArgs {
    /// Corpus (JSON lines).
    #[arg(long)]
    input: PathBuf,
    /// Share of each label that goes to the train side.
    #[arg(long, default_value_t = 0.5)]
    fraction: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct GenArgs {
    /// `geometric` (writes a feature table too) or `codegen`.
    #[arg(long, default_value = "geometric")]
    mode: SyntheticMode,
    #[arg(long, default_value_t = SyntheticConfig::default().n_classes)]
    classes: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().per_class)]
    per_class: usize,
    #[arg(long, default_value_t = SyntheticConfig::default().equiv_fraction)]
    equiv_fraction: f64,
    #[arg(long, default_value_t = SyntheticConfig::default().noise)]
    noise: f64,
    /// Geometric mode: feature dimension.
    #[arg(long, default_value_t = SyntheticConfig::default().feature_dim)]
    feature_dim: usize,
    /// Geometric mode: weight of the defect direction.
    #[arg(long, default_value_t = SyntheticConfig::default().shift)]
    shift: f64,
    /// Geometric mode: rank of each class's defect subspace.
    #[arg(long, default_value_t = SyntheticConfig::default().defect_rank)]
    defect_rank: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Training corpus (JSON lines).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluation corpus (JSON lines).
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct SweepArgs {
    #[arg(long)]
    train_data: PathBuf,
    #[arg(long)]
    test_data: PathBuf,
    /// Preset grid: `cpl` (7 x 8) or `contrastive` (7 x 6). Explicit
    /// `--lambdas` / `--zetas` take precedence.
    #[arg(long)]
    grid: Option<GridPreset>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    lambdas: Vec<f64>,
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    zetas: Vec<f64>,
    /// Upper bound on concurrently trained cells.
    #[arg(long, default_value_t = 1)]
    workers: usize,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    train: TrainFlags,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct StatsArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Checkpoint to compare against.
    #[arg(long)]
    baseline: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RESAMPLES)]
    resamples: usize,
    /// Permutation-test seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ExportArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Classes to export; all when absent.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<u64>,
    #[command(flatten)]
    features: FeatureArgs,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ReplayArgs {
    manifest: PathBuf,
    /// Write to this directory instead of the recorded one.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Files a command produces, by name inside the output directory.
type Outputs = Vec<(&'static str, String)>;

fn grid_name(g: GridPreset) -> &'static str {
    match g {
        GridPreset::Cpl => "cpl",
        GridPreset::Contrastive => "contrastive",
    }
}

fn mode_name(m: SyntheticMode) -> &'static str {
    match m {
        SyntheticMode::Geometric => "geometric",
        SyntheticMode::Codegen => "codegen",
    }
}

fn load_model(path: &Path) -> Result<Model> {
    Ok(Checkpoint::load(path)?.model)
}

fn stats_json(s: &DistanceStats) -> serde_json::Value {
    json!({
        "equivalent": s.equivalent,
        "non_equivalent": s.non_equivalent,
        "ratio": s.ratio,
    })
}

fn to_pretty(v: &impl serde::Serialize) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

impl Command {
    fn out(&self) -> &OutArgs {
        match self {
            Command::Preprocess(a) => &a.out,
            Command::Gen(a) => &a.out,
            Command::Train(a) => &a.out,
            Command::Eval(a) => &a.out,
            Command::Sweep(a) => &a.out,
            Command::Stats(a) => &a.out,
            Command::Export(a) => &a.out,
            Command::Replay(_) => unreachable!("replay is resolved before running"),
        }
    }

    fn inputs(&self) -> Vec<&Path> {
        let mut v: Vec<&Path> = Vec::new();
        match self {
            Command::Preprocess(a) => v.push(&a.input),
            Command::Gen(_) | Command::Replay(_) => {}
            Command::Train(a) => {
                v.push(&a.data);
                v.extend(a.features.inputs());
            }
            Command::Eval(a) => {
                v.extend([a.checkpoint.as_path(), a.data.as_path()]);
                v.extend(a.features.inputs());
            }
            Command::Sweep(a) => {
                v.extend([a.train_data.as_path(), a.test_data.as_path()]);
                v.extend(a.features.inputs());
            }
            Command::Stats(a) => {
                v.extend([a.checkpoint.as_path(), a.data.as_path()]);
                v.extend(a.baseline.as_deref());
                v.extend(a.features.inputs());
            }
            Command::Export(a) => {
                v.extend([a.checkpoint.as_path(), a.data.as_path()]);
                v.extend(a.features.inputs());
            }
        }
        v
    }

    fn manifest(&self) -> Manifest {
        let mut m = match self {
            Command::Preprocess(a) => {
                let mut m = Manifest::new("preprocess");
                m.set_path("input", &a.input);
                m.set("fraction", a.fraction);
                m.set("seed", a.seed);
                m
            }
            Command::Gen(a) => {
                let mut m = Manifest::new("gen");
                m.set("mode", mode_name(a.mode));
                m.set("classes", a.classes);
                m.set("per-class", a.per_class);
                m.set("equiv-fraction", a.equiv_fraction);
                m.set("noise", a.noise);
                m.set("feature-dim", a.feature_dim);
                m.set("shift", a.shift);
                m.set("defect-rank", a.defect_rank);
                m.set("seed", a.seed);
                m
            }
            Command::Train(a) => {
                let mut m = Manifest::new("train");
                m.set_path("data", &a.data);
                a.features.record(&mut m);
                a.train.record(&mut m);
                m
            }
            Command::Eval(a) => {
                let mut m = Manifest::new("eval");
                m.set_path("checkpoint", &a.checkpoint);
                m.set_path("data", &a.data);
                a.features.record(&mut m);
                m
            }
            Command::Sweep(a) => {
                let mut m = Manifest::new("sweep");
                m.set_path("train-data", &a.train_data);
                m.set_path("test-data", &a.test_data);
                m.set_opt("grid", a.grid.map(grid_name));
                m.set_list("lambdas", &a.lambdas);
                m.set_list("zetas", &a.zetas);
                m.set("workers", a.workers);
                a.features.record(&mut m);
                a.train.record(&mut m);
                m
            }
            Command::Stats(a) => {
                let mut m = Manifest::new("stats");
                m.set_path("checkpoint", &a.checkpoint);
                m.set_opt_path("baseline", a.baseline.as_deref());
                m.set_path("data", &a.data);
                m.set("resamples", a.resamples);
                m.set("seed", a.seed);
                a.features.record(&mut m);
                m
            }
            Command::Export(a) => {
                let mut m = Manifest::new("export");
                m.set_path("checkpoint", &a.checkpoint);
                m.set_path("data", &a.data);
                m.set_list("classes", &a.classes);
                a.features.record(&mut m);
                m
            }
            Command::Replay(_) => unreachable!("replay is resolved before running"),
        };
        let out = self.out();
        m.set_path("out", &out.out);
        m.set("verbosity", out.verbosity);
        m
    }

    fn execute(&self) -> Result<Outputs> {
        match self {
            Command::Preprocess(a) => {
                let raw = ingest(&a.input)?;
                let corpus = dedup(&raw);
                let (tr, te) = split(&corpus, a.fraction, a.seed)?;
                let [tr_neg, tr_pos] = tr.label_counts();
                let [te_neg, te_pos] = te.label_counts();
                println!(
                    "kept {} of {} records; train {tr_pos} equivalent / {tr_neg} non-equivalent, test {te_pos} / {te_neg}",
                    corpus.len(),
                    raw.len()
                );
                Ok(vec![("train.jsonl", tr.to_jsonl()), ("test.jsonl", te.to_jsonl())])
            }
            Command::Gen(a) => {
                let syn = generate_synthetic(&SyntheticConfig {
                    mode: a.mode,
                    n_classes: a.classes,
                    per_class: a.per_class,
                    equiv_fraction: a.equiv_fraction,
                    noise: a.noise,
                    seed: a.seed,
                    feature_dim: a.feature_dim,
                    shift: a.shift,
                    defect_rank: a.defect_rank,
                })?;
                println!("generated {} records", syn.corpus.len());
                let mut out = vec![("corpus.jsonl", syn.corpus.to_jsonl())];
                if let Some(t) = syn.features {
                    out.push(("features.jsonl", t.to_jsonl()));
                }
                Ok(out)
            }
            Command::Train(a) => {
                let source = a.features.source()?;
                let data = featurize(&ingest(&a.data)?, &source)?;
                let cfg = a.train.config(source.dim());
                let run = train(&cfg, &data);
                if a.out.verbosity > 0 {
                    for r in &run.history {
                        eprintln!("{}", r.to_json_line());
                    }
                }
                let ckpt = run.result?;
                let mut history = String::new();
                for r in &run.history {
                    history.push_str(&r.to_json_line());
                    history.push('\n');
                }
                if let Some(last) = run.history.last() {
                    println!(
                        "trained {} epochs ({} steps); final joint loss {:.6}",
                        ckpt.epoch, ckpt.step, last.joint_loss
                    );
                }
                Ok(vec![("checkpoint.json", ckpt.to_json()), ("history.jsonl", history)])
            }
            Command::Eval(a) => {
                let model = load_model(&a.checkpoint)?;
                let data = featurize(&ingest(&a.data)?, &a.features.source()?)?;
                let report = evaluate(&model, &data)?;
                let pct = |v: Option<f64>| v.map_or_else(|| "-".into(), |x| format!("{:.2}", 100.0 * x));
                println!(
                    "precision {} recall {} f1 {}",
                    pct(report.precision),
                    pct(report.recall),
                    pct(report.f1)
                );
                Ok(vec![("report.json", to_pretty(&report))])
            }
            Command::Sweep(a) => {
                let (preset_l, preset_z) = a.grid.map(GridPreset::values).unwrap_or_default();
                let lambdas = if a.lambdas.is_empty() { preset_l } else { a.lambdas.clone() };
                let zetas = if a.zetas.is_empty() { preset_z } else { a.zetas.clone() };
                let source = a.features.source()?;
                let train_set = featurize(&ingest(&a.train_data)?, &source)?;
                let test = featurize(&ingest(&a.test_data)?, &source)?;
                let base = a.train.config(source.dim());
                let grid = sweep(&base, &train_set, &test, &lambdas, &zetas, a.workers)?;
                let failed = grid.cells.iter().filter(|c| c.outcome.is_err()).count();
                print!("{} cells ({failed} failed)", grid.cells.len());
                match grid.best() {
                    Some(b) => println!("; best lambda {} zeta {}", b.lambda, b.zeta),
                    None => println!(),
                }
                Ok(vec![("sweep.csv", grid.to_csv()), ("sweep.txt", grid.to_matrix_text())])
            }
            Command::Stats(a) => {
                let source = a.features.source()?;
                let data = featurize(&ingest(&a.data)?, &source)?;
                let stats = distance_stats(&load_model(&a.checkpoint)?, &data)?;
                let separation = permutation_test(
                    &stats.non_equivalent_distances,
                    &stats.equivalent_distances,
                    a.resamples,
                    a.seed,
                )?;
                let mut out = json!({
                    "model": stats_json(&stats),
                    "separation": separation,
                });
                println!(
                    "ratio {}",
                    stats.ratio.map_or_else(|| "undefined".into(), |r| format!("{r:.4}"))
                );
                if let Some(b) = &a.baseline {
                    let base = distance_stats(&load_model(b)?, &data)?;
                    let shift = permutation_test(
                        &stats.non_equivalent_distances,
                        &base.non_equivalent_distances,
                        a.resamples,
                        a.seed,
                    )?;
                    let factor = stats.ratio.zip(base.ratio).map(|(m, b)| m / b);
                    out["baseline"] = stats_json(&base);
                    out["ratio_factor"] = json!(factor);
                    out["non_equivalent_shift"] = json!(shift);
                    println!("non-equivalent shift p = {}", shift.p_value);
                }
                Ok(vec![("stats.json", to_pretty(&out))])
            }
            Command::Export(a) => {
                let model = load_model(&a.checkpoint)?;
                let csv = export_embeddings(&model, &ingest(&a.data)?, &a.features.source()?, &a.classes)?;
                println!("exported {} rows", csv.lines().count().saturating_sub(1));
                Ok(vec![("embeddings.csv", csv)])
            }
            Command::Replay(_) => unreachable!("replay is resolved before running"),
        }
    }
}

fn same_file(a: &Path, b: &Path) -> bool {
    match (fs::canonicalize(a), fs::canonicalize(b)) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

fn run(cmd: &Command) -> Result<()> {
    let manifest = cmd.manifest();
    let outputs = cmd.execute()?;
    let dir = &cmd.out().out;
    let inputs = cmd.inputs();
    for name in outputs.iter().map(|(n, _)| *n).chain([MANIFEST_FILE]) {
        let target = dir.join(name);
        if let Some(hit) = inputs.iter().find(|i| same_file(i, &target)) {
            return Err(Error::Config(format!(
                "output {} would overwrite input {}",
                target.display(),
                hit.display()
            )));
        }
    }
    fs::create_dir_all(dir)?;
    for (name, content) in &outputs {
        fs::write(dir.join(name), content)?;
    }
    fs::write(dir.join(MANIFEST_FILE), manifest.to_text())?;
    Ok(())
}

enum Failure {
    Usage(clap::Error),
    Domain(Error),
}

fn resolve(cli: Cli) -> std::result::Result<Command, Failure> {
    match cli.command {
        Command::Replay(r) => {
            let text = fs::read_to_string(&r.manifest).map_err(|e| Failure::Domain(e.into()))?;
            let m = Manifest::parse(&text).map_err(Failure::Domain)?;
            let cli = Cli::try_parse_from(m.to_args(r.out.as_deref())).map_err(Failure::Usage)?;
            match cli.command {
                Command::Replay(_) => Err(Failure::Domain(Error::Config("a manifest cannot record a replay".into()))),
                cmd => Ok(cmd),
            }
        }
        cmd => Ok(cmd),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        // help and version exit 0, usage errors exit 2
        Err(e) => e.exit(),
    };
    let result = match resolve(cli) {
        Ok(cmd) => run(&cmd).map_err(Failure::Domain),
        Err(f) => Err(f),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            let _ = e.print();
            ExitCode::from(2)
        }
        Err(Failure::Domain(e)) => {
            eprintln!("error: {}: {e}", e.name());
            ExitCode::from(1)
        }
    }
}
