mod common;

use common::{random_case, replay_all};
use earlywarn::dataset::{gen_synthetic, GenConfig, ScenarioLabel};
use earlywarn::model::{Dims, ModelParams};
use earlywarn::trainer::{
    adam_step, compute_gradients, rollout, train, AdamConfig, AdamState, Batch, Checkpoint, ExperimentConfig, Trainer,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny_data() -> earlywarn::dataset::Dataset {
    let cfg = GenConfig {
        n_pos: 6,
        n_neg: 6,
        frames: 12,
        fps: 4.0,
        d_img: 4,
        d_obj: 3,
        max_objects: 3,
        cue_dims: 2,
        ramp_start: 6,
        ramp_slope: 0.5,
        accident_min: 8,
        accident_max: 11,
        ..GenConfig::dad_like()
    };
    gen_synthetic(&cfg, 11).unwrap()
}

fn tiny_config(epochs: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.model.d_att = 4;
    cfg.model.d_hidden = 6;
    cfg.model.d_mlp = 4;
    cfg.train.epochs = epochs;
    cfg.train.batch_size = 4;
    cfg.train.window = 3;
    cfg.train.val_fraction = 0.34;
    cfg
}

#[test]
fn single_frame_episode() {
    let data = tiny_data();
    let mut seq = data.samples[0].sequence.clone();
    seq.image_feats = seq.image_feats.slice(ndarray::s![..1, ..]).to_owned();
    seq.object_feats = seq.object_feats.slice(ndarray::s![..1, .., ..]).to_owned();
    seq.object_mask = seq.object_mask.slice(ndarray::s![..1, ..]).to_owned();
    let cfg = tiny_config(0);
    let dims = Dims::new(4, 3, 3, &cfg.model);
    let params = ModelParams::init(dims, 1);
    let r = rollout(
        &seq,
        ScenarioLabel::positive(1),
        &params,
        &cfg.pipeline().unwrap(),
        &cfg.reward,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert_eq!(r.trace.len(), 1);
    assert_eq!(r.forward.frames[0].summary, r.forward.frames[0].gru.hidden);
}

#[test]
fn zero_window_feeds_latest_state() {
    let data = tiny_data();
    let mut cfg = tiny_config(0);
    cfg.train.window = 0;
    let dims = Dims::new(4, 3, 3, &cfg.model);
    let params = ModelParams::init(dims, 2);
    let s = &data.samples[0];
    let r = rollout(
        &s.sequence,
        s.label,
        &params,
        &cfg.pipeline().unwrap(),
        &cfg.reward,
        &mut ChaCha8Rng::seed_from_u64(3),
    )
    .unwrap();
    for f in &r.forward.frames {
        assert_eq!(f.summary, f.gru.hidden);
    }
}

#[test]
fn rollout_is_deterministic_under_seed() {
    let data = tiny_data();
    let cfg = tiny_config(0);
    let params = ModelParams::init(Dims::new(4, 3, 3, &cfg.model), 2);
    let s = &data.samples[1];
    let p = cfg.pipeline().unwrap();
    let a = rollout(
        &s.sequence,
        s.label,
        &params,
        &p,
        &cfg.reward,
        &mut ChaCha8Rng::seed_from_u64(5),
    )
    .unwrap();
    let b = rollout(
        &s.sequence,
        s.label,
        &params,
        &p,
        &cfg.reward,
        &mut ChaCha8Rng::seed_from_u64(5),
    )
    .unwrap();
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.noise, b.noise);
}

#[test]
fn critic_only_value_bias_gradient() {
    let mut case = random_case(7);
    case.loss.anticipation_scale = 0.0;
    case.loss.actor_scale = 0.0;
    case.loss.alpha = 1.0;
    case.loss.beta = 1.0;
    case.pipeline.aux_weight = 0.0;
    case.params = ModelParams::zeros(case.params.dims);
    let rollouts = replay_all(&case, &case.params);
    let all: Vec<f64> = rollouts
        .iter()
        .flat_map(|r| r.trace.normalized_rewards.clone())
        .collect();
    let mean = all.iter().sum::<f64>() / all.len() as f64;
    let batch = Batch::new(case.samples.iter().collect(), rollouts).unwrap();
    let g = compute_gradients(&batch, &case.params, &case.pipeline, &case.loss).unwrap();
    assert!((g.actor_critic.b_value[0] + mean).abs() < 1e-15);
}

#[test]
fn adam_zero_gradient_and_symmetry() {
    let cfg = tiny_config(0);
    let mut p = ModelParams::init(Dims::new(2, 2, 1, &cfg.model), 4);
    let before = p.clone();
    let zero = p.zeros_like();
    let mut st = AdamState::new(&p);
    adam_step(&mut p, &zero, &mut st, 1e-3, &AdamConfig::default());
    assert_eq!(p, before);

    let mut q = p.zeros_like();
    let mut st = AdamState::new(&q);
    let mut g = q.zeros_like();
    g.gru.b_z.fill(0.7);
    adam_step(&mut q, &g, &mut st, 1e-3, &AdamConfig::default());
    assert!(q.gru.b_z.iter().all(|&v| v == q.gru.b_z[0] && (v + 1e-3).abs() < 1e-9));
}

#[test]
fn zero_epochs_gives_initial_checkpoint_only() {
    let out = train(&tiny_data(), &tiny_config(0)).unwrap();
    assert!(out.log.is_empty());
    assert_eq!(out.final_checkpoint, out.initial);
    assert_eq!(out.best, out.initial);
}

#[test]
fn training_is_deterministic() {
    let data = tiny_data();
    let a = train(&data, &tiny_config(3)).unwrap();
    let b = train(&data, &tiny_config(3)).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(
        a.final_checkpoint.to_json().unwrap(),
        b.final_checkpoint.to_json().unwrap()
    );
    assert_eq!(a.log.len(), 3);
}

#[test]
fn resume_matches_uninterrupted_run() {
    let data = tiny_data();
    let full = train(&data, &tiny_config(4)).unwrap();
    let half = train(&data, &tiny_config(2)).unwrap();
    let text = half.final_checkpoint.to_json().unwrap();
    let mut ckpt = Checkpoint::from_json(&text).unwrap();
    ckpt.config.train.epochs = 4;
    let mut t = Trainer::resume(&data, ckpt).unwrap();
    while !t.is_done() {
        t.run_epoch().unwrap();
    }
    let mut resumed = t.checkpoint();
    resumed.config.train.epochs = 4;
    assert_eq!(resumed.params, full.final_checkpoint.params);
    assert_eq!(resumed.log, full.final_checkpoint.log);
    assert_eq!(resumed.adam, full.final_checkpoint.adam);
}

#[test]
fn checkpoint_round_trip_is_exact() {
    let out = train(&tiny_data(), &tiny_config(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("c.json");
    out.final_checkpoint.save(&p).unwrap();
    assert_eq!(Checkpoint::load(&p).unwrap(), out.final_checkpoint);
    let missing = dir.path().join("nope.json");
    let err = Checkpoint::load(&missing).unwrap_err().to_string();
    assert!(err.contains("nope.json"), "{err}");
}

#[test]
fn split_is_stratified() {
    let data = tiny_data();
    let (tr, va) = earlywarn::trainer::split_indices(&data, 0.34, 9);
    assert_eq!(tr.len() + va.len(), data.len());
    let pos = va.iter().filter(|&&i| data.samples[i].label.positive).count();
    assert!(pos >= 1 && pos < va.len());
}
