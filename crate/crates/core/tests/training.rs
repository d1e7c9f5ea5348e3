mod common;

use common::*;
use cpl_core::data::FeatureRecord;
use cpl_core::encoder::ModelDims;
use cpl_core::trainer::{train, Checkpoint, LossKind, TrainConfig, Trainer};
use cpl_core::Error;

fn small_config(kind: LossKind) -> TrainConfig {
    TrainConfig {
        loss_kind: kind,
        dims: ModelDims {
            feature_dim: 256,
            hidden_dim: 16,
            embed_dim: 8,
            head_hidden_dim: 8,
        },
        epochs: 3,
        seed: 2,
        ..TrainConfig::default()
    }
}

fn bits(t: &Trainer) -> Vec<u64> {
    let ck = t.checkpoint();
    let mut m = ck.model;
    m.param_tensors_mut()
        .iter()
        .flat_map(|t| t.iter().map(|v| v.to_bits()))
        .collect()
}

#[test]
fn zero_lambda_cpl_matches_ce_only_bit_for_bit() {
    let data = geometric_data(1);
    let mut cpl_cfg = small_config(LossKind::CePlusCpl);
    cpl_cfg.loss.lambda = 0.0;
    let mut a = Trainer::new(cpl_cfg).unwrap();
    let mut b = Trainer::new(small_config(LossKind::CeOnly)).unwrap();
    let (mut ha, mut hb) = (Vec::new(), Vec::new());
    a.fit(&data.train, &mut ha).unwrap();
    b.fit(&data.train, &mut hb).unwrap();
    assert_eq!(bits(&a), bits(&b));
    for (x, y) in ha.iter().zip(&hb) {
        assert_eq!(x.ce_loss.to_bits(), y.ce_loss.to_bits());
    }
    // the CPL run still tracked its verges
    assert!(!a.verges().is_empty());
}

#[test]
fn verges_act_as_constants() {
    let data = geometric_data(2);
    let mut live = Trainer::new(small_config(LossKind::CePlusCpl)).unwrap();
    live.fit_to(&data.train, 1, &mut Vec::new()).unwrap();
    for chunk in data.train.chunks(4).take(10) {
        let batch: Vec<&FeatureRecord> = chunk.iter().collect();
        let mut frozen = live.clone();
        live.train_step(&batch).unwrap();
        frozen.train_step_with_verges(&batch, &live.verges().clone()).unwrap();
        assert_eq!(bits(&live), bits(&frozen));
    }
}

#[test]
fn contrastive_never_touches_verges() {
    let data = geometric_data(3);
    let mut t = Trainer::new(small_config(LossKind::CePlusContrastive)).unwrap();
    t.fit(&data.train, &mut Vec::new()).unwrap();
    assert!(t.verges().is_empty());
    assert!(t.checkpoint().verge_registry().unwrap().is_empty());
}

#[test]
fn cpl_loss_falls_over_the_first_epochs() {
    let data = geometric_data(0);
    let cfg = TrainConfig {
        epochs: 5,
        ..train_config(LossKind::CePlusCpl, 0)
    };
    let run = train(&cfg, &data.train);
    run.result.unwrap();
    let joint: Vec<f64> = run.history.iter().map(|r| r.joint_loss).collect();
    assert_eq!(joint.len(), 5);
    for w in joint.windows(2) {
        assert!(w[1] <= w[0], "joint loss rose: {joint:?}");
    }
}

#[test]
fn repeated_runs_are_identical() {
    let data = geometric_data(4);
    for kind in LossKind::ALL {
        let a = train(&small_config(kind), &data.train);
        let b = train(&small_config(kind), &data.train);
        assert_eq!(a.history, b.history, "{kind}");
        assert_eq!(a.result.unwrap().to_json(), b.result.unwrap().to_json(), "{kind}");
    }
}

#[test]
fn resume_through_disk_matches_straight_run() {
    let data = geometric_data(5);
    let cfg = small_config(LossKind::CePlusCpl);
    let straight = train(&cfg, &data.train);
    let dir = tempfile::tempdir().unwrap();
    for k in 1..cfg.epochs {
        let path = dir.path().join(format!("k{k}.json"));
        let mut t = Trainer::new(cfg.clone()).unwrap();
        let mut history = Vec::new();
        t.fit_to(&data.train, k, &mut history).unwrap();
        t.checkpoint().save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, t.checkpoint());
        let mut resumed = Trainer::from_checkpoint(loaded).unwrap();
        resumed.fit(&data.train, &mut history).unwrap();
        assert_eq!(history, straight.history);
        assert_eq!(resumed.checkpoint().to_json(), straight.result.as_ref().unwrap().to_json());
    }
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let data = geometric_data(6);
    let ckpt = train(&small_config(LossKind::CePlusCpl), &data.train).result.unwrap();
    let json = ckpt.to_json();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.json");
    for (bad, want_version) in [
        (json.replacen("\"version\":1", "\"version\":7", 1), true),
        (json.replacen("cpl-checkpoint", "something-else", 1), true),
        (json[..json.len() - 10].to_string(), false),
        (json.replacen("\"epoch\":3", "\"epoch\":\"three\"", 1), false),
        (String::from("{}"), true),
    ] {
        std::fs::write(&path, bad).unwrap();
        match Checkpoint::load(&path) {
            Err(Error::Version(_)) => assert!(want_version),
            Err(Error::Deserialize(_)) => assert!(!want_version),
            other => panic!("unexpected {other:?}"),
        }
    }
    // a model whose layer shape disagrees with its dims is refused
    let mut broken = ckpt.clone();
    broken.model.encoder.hidden.bias.pop();
    assert!(Checkpoint::from_json(&broken.to_json()).is_err());
}

#[test]
fn training_rejects_bad_input() {
    let data = geometric_data(7);
    let run = train(&TrainConfig { epochs: 0, ..small_config(LossKind::CeOnly) }, &data.train);
    assert!(matches!(run.result, Err(Error::Config(_))));
    let mut cfg = small_config(LossKind::CeOnly);
    cfg.dims.feature_dim = 32;
    let run = train(&cfg, &data.train);
    assert!(matches!(run.result, Err(Error::Dimension { expected: 32, actual: 256 })));
    assert!(run.history.is_empty());
}

#[test]
fn divergence_reports_the_step_and_keeps_history() {
    let data = geometric_data(8);
    let mut cfg = small_config(LossKind::CePlusCpl);
    cfg.epochs = 4;
    let mut t = Trainer::new(cfg).unwrap();
    let mut history = Vec::new();
    t.fit_to(&data.train, 2, &mut history).unwrap();
    // poison one parameter so the next forward pass is non-finite
    let mut model = t.model().clone();
    model.param_tensors_mut()[2][0] = f64::NAN;
    assert!(t.set_model(model).is_err());

    let mut model = t.model().clone();
    model.param_tensors_mut()[3][0] = 1e308;
    model.param_tensors_mut()[3][1] = -1e308;
    t.set_model(model).unwrap();
    let err = t.fit(&data.train, &mut history).unwrap_err();
    match err {
        Error::Divergence { step, .. } => assert_eq!(step, t.steps()),
        other => panic!("expected divergence, got {other:?}"),
    }
    assert_eq!(history.len(), 2);
}

#[test]
fn step_trace_is_opt_in() {
    let data = geometric_data(9);
    let mut t = Trainer::new(small_config(LossKind::CePlusTriplet)).unwrap();
    t.fit(&data.train, &mut Vec::new()).unwrap();
    assert!(t.step_trace().is_empty());
    let mut cfg = small_config(LossKind::CePlusTriplet);
    cfg.trace_steps = true;
    let mut t = Trainer::new(cfg).unwrap();
    t.fit(&data.train, &mut Vec::new()).unwrap();
    assert_eq!(t.step_trace().len() as u64, t.steps());
}
