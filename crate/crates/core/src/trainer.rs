//! Joint cross-entropy + metric-loss training loop with checkpointing.
//!
//! One step encodes every origin and mutant of the batch, updates the
//! verges from the resulting distances (CPL only), evaluates the metric
//! loss against the post-update verges, adds the pair-classifier
//! cross-entropy, backpropagates both and takes one Adam step. Verges are
//! constants during backpropagation.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{make_batches, FeatureRecord};
use crate::encoder::{EncoderTrace, Model, ModelDims, ModelGrads, PairTrace};
use crate::error::{Error, Result};
use crate::losses::{contrastive, cpl, cross_entropy, joint, triplet, EmbeddedSample, LossConfig};
use crate::optim::{Adam, AdamConfig};
use crate::verge::{VergeInit, VergeRegistry};

const CHECKPOINT_FORMAT: &str = "cpl-checkpoint";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    CeOnly,
    CePlusCpl,
    CePlusContrastive,
    CePlusTriplet,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [
        LossKind::CeOnly,
        LossKind::CePlusCpl,
        LossKind::CePlusContrastive,
        LossKind::CePlusTriplet,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::CeOnly => "ce_only",
            LossKind::CePlusCpl => "ce_plus_cpl",
            LossKind::CePlusContrastive => "ce_plus_contrastive",
            LossKind::CePlusTriplet => "ce_plus_triplet",
        }
    }

    pub fn uses_verges(self) -> bool {
        self == LossKind::CePlusCpl
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        LossKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown loss kind {s:?}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub loss_kind: LossKind,
    pub loss: LossConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub seed: u64,
    pub dims: ModelDims,
    pub verge_init: VergeInit,
    /// Keep a per-step metrics trace in addition to epoch means.
    pub trace_steps: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            loss_kind: LossKind::CePlusCpl,
            loss: LossConfig::default(),
            epochs: 30,
            batch_size: 4,
            optimizer: AdamConfig::default(),
            seed: 0,
            dims: ModelDims::default(),
            verge_init: VergeInit::Literal,
            trace_steps: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        self.loss.validate()?;
        self.optimizer.validate()?;
        self.dims.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub ce_loss: f64,
    pub metric_loss: f64,
    pub joint_loss: f64,
    pub skipped_count: usize,
}

/// Epoch means of the step losses; `skipped_count` is the epoch total.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub ce_loss: f64,
    pub metric_loss: f64,
    pub joint_loss: f64,
    pub skipped_count: usize,
}

impl EpochRecord {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("epoch record serializes")
    }
}

/// Loss values and upstream gradients of one batch, before the encoder and
/// classifier backward passes.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchObjective {
    pub ce_loss: f64,
    pub metric_loss: f64,
    pub joint_loss: f64,
    pub skipped_count: usize,
    /// Metric-loss gradients w.r.t. origin embeddings, already scaled by lambda.
    pub origin_grads: Vec<Vec<f64>>,
    /// Metric-loss gradients w.r.t. mutant embeddings, already scaled by lambda.
    pub mutant_grads: Vec<Vec<f64>>,
    /// Mean cross-entropy gradients w.r.t. each sample's logits.
    pub logit_grads: Vec<[f64; 2]>,
}

/// Per-sample gradient rows.
type Grads = Vec<Vec<f64>>;

/// In-batch triplets: each equivalent sample's origin is the anchor and its
/// mutant the positive; every non-equivalent sample of the same class is a
/// negative. The loss is the mean over the triplets formed (0 if none).
fn in_batch_triplets(samples: &[EmbeddedSample], margin: f64) -> Result<(f64, Grads, Grads)> {
    let dim = samples[0].origin.dim();
    let mut og = vec![vec![0.0; dim]; samples.len()];
    let mut mg = vec![vec![0.0; dim]; samples.len()];
    let mut pairs = Vec::new();
    for (i, a) in samples.iter().enumerate().filter(|(_, s)| s.label == 1) {
        for (j, _) in samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.label == 0 && s.class_id == a.class_id)
        {
            pairs.push((i, j));
        }
    }
    if pairs.is_empty() {
        return Ok((0.0, og, mg));
    }
    let scale = 1.0 / pairs.len() as f64;
    let mut value = 0.0;
    for (i, j) in pairs {
        let t = triplet(&samples[i].origin, &samples[i].mutant, &samples[j].mutant, margin)?;
        value += t.value * scale;
        for k in 0..dim {
            og[i][k] += scale * t.anchor_grad[k];
            mg[i][k] += scale * t.positive_grad[k];
            mg[j][k] += scale * t.negative_grad[k];
        }
    }
    Ok((value, og, mg))
}

/// Metric loss (per `kind`, against the given verges) plus mean pair
/// cross-entropy over `logits`, combined as `metric * lambda + ce`.
pub fn batch_objective(
    kind: LossKind,
    cfg: &LossConfig,
    samples: &[EmbeddedSample],
    logits: &[[f64; 2]],
    verges: &VergeRegistry,
) -> Result<BatchObjective> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch("training batch is empty".into()));
    }
    if logits.len() != samples.len() {
        return Err(Error::Dimension {
            expected: samples.len(),
            actual: logits.len(),
        });
    }
    let m = samples.len() as f64;
    let mut ce_loss = 0.0;
    let mut logit_grads = Vec::with_capacity(samples.len());
    for (s, l) in samples.iter().zip(logits) {
        let ce = cross_entropy(*l, s.label)?;
        ce_loss += ce.value;
        logit_grads.push([ce.grad_logits[0] / m, ce.grad_logits[1] / m]);
    }
    ce_loss /= m;

    let dim = samples[0].origin.dim();
    let (metric_loss, skipped_count, mut origin_grads, mut mutant_grads) = match kind {
        LossKind::CeOnly => (
            0.0,
            0,
            vec![vec![0.0; dim]; samples.len()],
            vec![vec![0.0; dim]; samples.len()],
        ),
        LossKind::CePlusCpl => {
            let out = cpl(samples, verges, cfg)?;
            (out.value, out.skipped_count, out.origin_grads, out.mutant_grads)
        }
        LossKind::CePlusContrastive => {
            let out = contrastive(samples, cfg)?;
            (out.value, 0, out.origin_grads, out.mutant_grads)
        }
        LossKind::CePlusTriplet => {
            let (v, og, mg) = in_batch_triplets(samples, cfg.zeta)?;
            (v, 0, og, mg)
        }
    };
    for g in origin_grads.iter_mut().chain(mutant_grads.iter_mut()) {
        for v in g.iter_mut() {
            *v *= cfg.lambda;
        }
    }
    Ok(BatchObjective {
        ce_loss,
        metric_loss,
        joint_loss: joint(metric_loss, ce_loss, cfg.lambda)?,
        skipped_count,
        origin_grads,
        mutant_grads,
        logit_grads,
    })
}

fn forward(model: &Model, batch: &[&FeatureRecord]) -> Result<Forward> {
    let mut fwd = Forward {
        samples: Vec::with_capacity(batch.len()),
        origin_traces: Vec::with_capacity(batch.len()),
        mutant_traces: Vec::with_capacity(batch.len()),
        pair_traces: Vec::with_capacity(batch.len()),
    };
    for r in batch {
        let to = model.encoder.encode_traced(r.origin.as_slice())?;
        let ts = model.encoder.encode_traced(r.mutant.as_slice())?;
        let pt = model.classifier.classify_traced(&to.output, &ts.output)?;
        fwd.samples.push(EmbeddedSample::new(r.class_id, to.output.clone(), ts.output.clone(), r.label)?);
        fwd.origin_traces.push(to);
        fwd.mutant_traces.push(ts);
        fwd.pair_traces.push(pt);
    }
    Ok(fwd)
}

/// CE gradients flow logits -> head -> embeddings; metric gradients join at
/// the embeddings; both continue through the encoder.
fn backward(model: &Model, fwd: &Forward, obj: &BatchObjective, add_metric: bool) -> Result<ModelGrads> {
    let mut grads = ModelGrads::zeros(&model.dims);
    for i in 0..fwd.samples.len() {
        let (mut go, mut gs) = model
            .classifier
            .backward(&fwd.pair_traces[i], obj.logit_grads[i], &mut grads.classifier)?;
        if add_metric {
            for (g, d) in go.iter_mut().zip(&obj.origin_grads[i]) {
                *g += d;
            }
            for (g, d) in gs.iter_mut().zip(&obj.mutant_grads[i]) {
                *g += d;
            }
        }
        model.encoder.backward(&fwd.origin_traces[i], &go, &mut grads.encoder)?;
        model.encoder.backward(&fwd.mutant_traces[i], &gs, &mut grads.encoder)?;
    }
    Ok(grads)
}

fn adds_metric(kind: LossKind, cfg: &LossConfig) -> bool {
    kind != LossKind::CeOnly && cfg.lambda != 0.0
}

/// Joint objective of `model` on `batch` and its gradient with respect to
/// every parameter, with `verges` read as constants.
pub fn model_gradients(
    model: &Model,
    kind: LossKind,
    cfg: &LossConfig,
    batch: &[&FeatureRecord],
    verges: &VergeRegistry,
) -> Result<(BatchObjective, ModelGrads)> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch("training batch is empty".into()));
    }
    let fwd = forward(model, batch)?;
    let logits: Vec<[f64; 2]> = fwd.pair_traces.iter().map(|t| t.logits).collect();
    let obj = batch_objective(kind, cfg, &fwd.samples, &logits, verges)?;
    let grads = backward(model, &fwd, &obj, adds_metric(kind, cfg))?;
    Ok((obj, grads))
}

/// Full training state: config, model, verges, optimizer and counters.
#[derive(Clone, Debug)]
pub struct Trainer {
    config: TrainConfig,
    model: Model,
    optimizer: Adam,
    verges: VergeRegistry,
    epoch: usize,
    step: u64,
    step_trace: Vec<StepMetrics>,
}

enum VergeMode<'a> {
    Update,
    Frozen(&'a VergeRegistry),
}

struct Forward {
    samples: Vec<EmbeddedSample>,
    origin_traces: Vec<EncoderTrace>,
    mutant_traces: Vec<EncoderTrace>,
    pair_traces: Vec<PairTrace>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = Model::init(config.seed, config.dims)?;
        let shapes: Vec<usize> = ModelGrads::zeros(&config.dims).tensors().iter().map(|t| t.len()).collect();
        let optimizer = Adam::new(config.optimizer, &shapes);
        let verges = VergeRegistry::with_init(config.loss.ema_params()?, config.verge_init);
        Ok(Trainer {
            config,
            model,
            optimizer,
            verges,
            epoch: 0,
            step: 0,
            step_trace: Vec::new(),
        })
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        ckpt.config.validate()?;
        ckpt.model.validate()?;
        let verges = VergeRegistry::restore(ckpt.verges.as_bytes())?;
        let expected: Vec<usize> = ModelGrads::zeros(&ckpt.model.dims).tensors().iter().map(|t| t.len()).collect();
        if ckpt.optimizer.shapes() != expected {
            return Err(Error::Deserialize("optimizer state does not match model shape".into()));
        }
        Ok(Trainer {
            config: ckpt.config,
            model: ckpt.model,
            optimizer: ckpt.optimizer,
            verges,
            epoch: ckpt.epoch,
            step: ckpt.step,
            step_trace: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    /// Replaces the model parameters, e.g. to start from a crafted state.
    pub fn set_model(&mut self, model: Model) -> Result<()> {
        model.validate()?;
        if model.dims != self.config.dims {
            return Err(Error::Config("model dims differ from config dims".into()));
        }
        self.model = model;
        Ok(())
    }

    pub fn verges(&self) -> &VergeRegistry {
        &self.verges
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    pub fn step_trace(&self) -> &[StepMetrics] {
        &self.step_trace
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            model: self.model.clone(),
            verges: String::from_utf8(self.verges.snapshot()).expect("snapshot is UTF-8"),
            optimizer: self.optimizer.clone(),
            epoch: self.epoch,
            step: self.step,
        }
    }

    /// One optimization step on `batch`.
    pub fn train_step(&mut self, batch: &[&FeatureRecord]) -> Result<StepMetrics> {
        self.step_impl(batch, VergeMode::Update)
    }

    /// One optimization step that reads the loss against `verges` and
    /// leaves the trainer's own registry untouched.
    pub fn train_step_with_verges(&mut self, batch: &[&FeatureRecord], verges: &VergeRegistry) -> Result<StepMetrics> {
        self.step_impl(batch, VergeMode::Frozen(verges))
    }

    fn step_impl(&mut self, batch: &[&FeatureRecord], mode: VergeMode<'_>) -> Result<StepMetrics> {
        if batch.is_empty() {
            return Err(Error::EmptyBatch("training batch is empty".into()));
        }
        let step = self.step;
        // numeric breakdowns during a step surface as divergence at that step
        let diverged = |e: Error| match e {
            Error::Numeric(message) | Error::DegenerateVector(message) => Error::Divergence { step, message },
            other => other,
        };
        let fwd = forward(&self.model, batch).map_err(diverged)?;

        let kind = self.config.loss_kind;
        let verges = match mode {
            VergeMode::Update => {
                if kind.uses_verges() {
                    self.verges.batch_update(&fwd.samples)?;
                }
                &self.verges
            }
            VergeMode::Frozen(v) => v,
        };
        let logits: Vec<[f64; 2]> = fwd.pair_traces.iter().map(|t| t.logits).collect();
        let obj = batch_objective(kind, &self.config.loss, &fwd.samples, &logits, verges).map_err(diverged)?;
        if !obj.joint_loss.is_finite() {
            return Err(Error::Divergence {
                step,
                message: format!("joint loss {}", obj.joint_loss),
            });
        }

        let grads = backward(&self.model, &fwd, &obj, adds_metric(kind, &self.config.loss))?;
        let grad_tensors = grads.tensors();
        if grad_tensors.iter().any(|t| t.iter().any(|v| !v.is_finite())) {
            return Err(Error::Divergence {
                step,
                message: "non-finite gradient".into(),
            });
        }
        self.optimizer.step(&mut self.model.param_tensors_mut(), &grad_tensors)?;
        if !self.model.is_finite() {
            return Err(Error::Divergence {
                step,
                message: "non-finite parameter after update".into(),
            });
        }
        self.step += 1;
        let metrics = StepMetrics {
            step,
            ce_loss: obj.ce_loss,
            metric_loss: obj.metric_loss,
            joint_loss: obj.joint_loss,
            skipped_count: obj.skipped_count,
        };
        if self.config.trace_steps {
            self.step_trace.push(metrics.clone());
        }
        Ok(metrics)
    }

    /// Runs one epoch over `data` with the `(seed, epoch)` batch order.
    pub fn run_epoch(&mut self, data: &[FeatureRecord]) -> Result<EpochRecord> {
        let batches = make_batches(data, self.config.batch_size, self.config.seed, self.epoch as u64)?;
        let n = batches.len() as f64;
        let mut rec = EpochRecord {
            epoch: self.epoch,
            ce_loss: 0.0,
            metric_loss: 0.0,
            joint_loss: 0.0,
            skipped_count: 0,
        };
        for b in &batches {
            let m = self.train_step(b)?;
            rec.ce_loss += m.ce_loss / n;
            rec.metric_loss += m.metric_loss / n;
            rec.joint_loss += m.joint_loss / n;
            rec.skipped_count += m.skipped_count;
        }
        self.epoch += 1;
        Ok(rec)
    }

    /// Trains until `last_epoch` epochs have completed, appending one record
    /// per epoch to `history`. On error, `history` holds the completed epochs.
    pub fn fit_to(&mut self, data: &[FeatureRecord], last_epoch: usize, history: &mut Vec<EpochRecord>) -> Result<()> {
        if data.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        if let Some(r) = data.first() {
            if r.origin.dim() != self.config.dims.feature_dim {
                return Err(Error::Dimension {
                    expected: self.config.dims.feature_dim,
                    actual: r.origin.dim(),
                });
            }
        }
        while self.epoch < last_epoch {
            history.push(self.run_epoch(data)?);
        }
        Ok(())
    }

    pub fn fit(&mut self, data: &[FeatureRecord], history: &mut Vec<EpochRecord>) -> Result<()> {
        self.fit_to(data, self.config.epochs, history)
    }
}

/// Result of [`train`]: the per-epoch history is kept even when training
/// aborts.
#[derive(Debug)]
pub struct TrainRun {
    pub history: Vec<EpochRecord>,
    pub result: Result<Checkpoint>,
}

pub fn train(config: &TrainConfig, data: &[FeatureRecord]) -> TrainRun {
    let mut history = Vec::new();
    let result = Trainer::new(config.clone()).and_then(|mut t| {
        t.fit(data, &mut history)?;
        Ok(t.checkpoint())
    });
    TrainRun { history, result }
}

/// Versioned container of everything needed to resume training.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: TrainConfig,
    pub model: Model,
    /// Verge registry snapshot text.
    pub verges: String,
    pub optimizer: Adam,
    pub epoch: usize,
    pub step: u64,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let value: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Deserialize(format!("checkpoint: {e}")))?;
        let format = value.get("format").and_then(|v| v.as_str());
        if format != Some(CHECKPOINT_FORMAT) {
            return Err(Error::Version(format!("not a checkpoint (format {format:?})")));
        }
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(u64::from(CHECKPOINT_VERSION)) {
            return Err(Error::Version(format!("checkpoint version {version:?}")));
        }
        let ckpt: Checkpoint =
            serde_json::from_value(value).map_err(|e| Error::Deserialize(format!("checkpoint: {e}")))?;
        ckpt.config.validate()?;
        ckpt.model.validate()?;
        VergeRegistry::restore(ckpt.verges.as_bytes())?;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn verge_registry(&self) -> Result<VergeRegistry> {
        VergeRegistry::restore(self.verges.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{EmaParams, Vector};
    use crate::verge::VergeState;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_dims() -> ModelDims {
        ModelDims {
            feature_dim: 12,
            hidden_dim: 10,
            embed_dim: 6,
            head_hidden_dim: 8,
        }
    }

    fn unit(v: &[f64]) -> Vector {
        Vector::new(v.to_vec()).unwrap().normalized().unwrap()
    }

    fn records(n: usize, seed: u64) -> Vec<FeatureRecord> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rand_vec = |rng: &mut ChaCha8Rng| unit(&(0..12).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<_>>());
        let origins: Vec<Vector> = (0..3).map(|_| rand_vec(&mut rng)).collect();
        (0..n)
            .map(|i| FeatureRecord {
                class_id: (i % 3) as u64,
                origin: origins[i % 3].clone(),
                mutant: rand_vec(&mut rng),
                label: (i % 2) as u8,
            })
            .collect()
    }

    fn config(kind: LossKind) -> TrainConfig {
        TrainConfig {
            loss_kind: kind,
            dims: small_dims(),
            epochs: 2,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    fn at_distance(d: f64) -> Vector {
        let theta = (1.0 - 2.0 * d).acos();
        unit(&[theta.cos(), theta.sin()])
    }

    #[test]
    fn joint_fixture_with_neutral_logits() {
        let cfg = LossConfig {
            zeta: 0.05,
            ..LossConfig::default()
        };
        let mut reg = VergeRegistry::new(EmaParams::new(12.0).unwrap());
        reg.set(
            0,
            VergeState {
                v_plus: Some(0.1),
                v_minus: Some(0.5),
            },
        )
        .unwrap();
        let o = unit(&[1.0, 0.0]);
        let batch = [
            EmbeddedSample::new(0, o.clone(), at_distance(0.6), 1).unwrap(),
            EmbeddedSample::new(0, o, at_distance(0.05), 0).unwrap(),
        ];
        let obj = batch_objective(LossKind::CePlusCpl, &cfg, &batch, &[[0.0, 0.0]; 2], &reg).unwrap();
        assert!((obj.metric_loss - 0.169364).abs() < 1e-6);
        assert!((obj.ce_loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((obj.joint_loss - 0.887916).abs() < 1e-6);
        assert_eq!(obj.logit_grads, vec![[0.25, -0.25], [-0.25, 0.25]]);
    }

    #[test]
    fn ce_only_step_reports_ce_as_joint() {
        let data = records(8, 1);
        let mut t = Trainer::new(config(LossKind::CeOnly)).unwrap();
        let batch: Vec<&FeatureRecord> = data.iter().take(4).collect();
        let m = t.train_step(&batch).unwrap();
        assert_eq!(m.metric_loss, 0.0);
        assert_eq!(m.joint_loss, m.ce_loss);
        assert!(t.verges().is_empty());
    }

    #[test]
    fn config_validation() {
        assert!(Trainer::new(TrainConfig {
            epochs: 0,
            ..config(LossKind::CeOnly)
        })
        .is_err());
        assert!(Trainer::new(TrainConfig {
            batch_size: 0,
            ..config(LossKind::CeOnly)
        })
        .is_err());
        assert_eq!("ce_plus_cpl".parse::<LossKind>().unwrap(), LossKind::CePlusCpl);
        assert!("cpl".parse::<LossKind>().is_err());
    }

    #[test]
    fn non_cpl_kinds_leave_verges_alone() {
        let data = records(12, 2);
        for kind in [LossKind::CePlusContrastive, LossKind::CePlusTriplet, LossKind::CeOnly] {
            let mut t = Trainer::new(config(kind)).unwrap();
            t.fit(&data, &mut Vec::new()).unwrap();
            assert!(t.verges().is_empty(), "{kind}");
        }
        let mut t = Trainer::new(config(LossKind::CePlusCpl)).unwrap();
        t.fit(&data, &mut Vec::new()).unwrap();
        assert_eq!(t.verges().len(), 3);
    }

    #[test]
    fn frozen_verges_give_the_same_update() {
        let data = records(8, 3);
        let batch: Vec<&FeatureRecord> = data.iter().take(4).collect();
        let mut live = Trainer::new(config(LossKind::CePlusCpl)).unwrap();
        live.fit_to(&data, 1, &mut Vec::new()).unwrap();
        let mut frozen = live.clone();
        live.train_step(&batch).unwrap();
        let constants = live.verges().clone();
        frozen.train_step_with_verges(&batch, &constants).unwrap();
        assert_eq!(live.model(), frozen.model());
    }

    #[test]
    fn checkpoint_round_trip_and_corruption() {
        let data = records(8, 4);
        let mut t = Trainer::new(config(LossKind::CePlusCpl)).unwrap();
        t.fit(&data, &mut Vec::new()).unwrap();
        let ckpt = t.checkpoint();
        let json = ckpt.to_json();
        assert_eq!(Checkpoint::from_json(&json).unwrap(), ckpt);

        let bumped = json.replacen("\"version\":1", "\"version\":2", 1);
        assert!(matches!(Checkpoint::from_json(&bumped), Err(Error::Version(_))));
        let truncated = &json[..json.len() / 2];
        assert!(matches!(Checkpoint::from_json(truncated), Err(Error::Deserialize(_))));
        let bad_verges = json.replacen("cpl-verges 1", "cpl-verges 9", 1);
        assert!(Checkpoint::from_json(&bad_verges).is_err());
    }

    #[test]
    fn train_keeps_history_length() {
        let data = records(10, 6);
        let run = train(&config(LossKind::CePlusCpl), &data);
        assert_eq!(run.history.len(), 2);
        assert_eq!(run.result.unwrap().epoch, 2);
        let run = train(&config(LossKind::CePlusCpl), &[]);
        assert!(matches!(run.result, Err(Error::EmptyCorpus)));
    }
}
