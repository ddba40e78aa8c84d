use vidtext::pipeline::{ablation_run, generate_synthetic, run_eval, run_train, Checkpoint, DatasetBundle, RunConfig};
use vidtext::Error;

fn tiny() -> RunConfig {
    let mut cfg = RunConfig::desk();
    cfg.data.n_clips = 240;
    cfg.data.n_groups = 6;
    cfg.model.dim = 16;
    cfg.model.heads = 2;
    cfg.model.layers = 1;
    cfg.optim.batch_size = 16;
    cfg.optim.steps = 80;
    cfg.rerank.steps = 60;
    cfg.rerank.batch_size = 16;
    cfg.rerank.k = 8;
    cfg.rerank.hard_negatives = 4;
    cfg
}

#[test]
fn training_reduces_the_loss() {
    let cfg = tiny();
    let (data, _) = generate_synthetic::<f32>(&cfg.data, cfg.seed).unwrap();
    let out = run_train(&cfg, &data).unwrap();
    assert_eq!(out.losses.len(), cfg.optim.steps);
    assert_eq!(out.itm_losses.len(), cfg.rerank.steps);
    let tail = &out.losses[out.losses.len() * 9 / 10..];
    let tail_mean = tail.iter().sum::<f64>() / tail.len() as f64;
    assert!(out.losses[0] > tail_mean, "first {} vs tail {tail_mean}", out.losses[0]);
}

#[test]
fn train_and_eval_are_deterministic() {
    let cfg = tiny();
    let (data, _) = generate_synthetic::<f32>(&cfg.data, cfg.seed).unwrap();
    let a = run_train(&cfg, &data).unwrap();
    let b = run_train(&cfg, &data).unwrap();
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
    assert_eq!(a.losses, b.losses);
    let ra = run_eval(&cfg, &data, &a.checkpoint).unwrap();
    let rb = run_eval(&cfg, &data, &b.checkpoint).unwrap();
    assert_eq!(ra.to_records("x"), rb.to_records("x"));
}

#[test]
fn seed_changes_the_data() {
    let cfg = tiny();
    let (a, _) = generate_synthetic::<f32>(&cfg.data, 1).unwrap();
    let (b, _) = generate_synthetic::<f32>(&cfg.data, 2).unwrap();
    assert_ne!(a.captions, b.captions);
}

#[test]
fn dataset_and_checkpoint_survive_disk() {
    let cfg = tiny();
    let dir = tempfile::tempdir().unwrap();
    let (data, _) = generate_synthetic::<f32>(&cfg.data, cfg.seed).unwrap();
    data.save(dir.path()).unwrap();
    let back = DatasetBundle::<f32>::load(dir.path()).unwrap();
    assert_eq!(back.clip_ids, data.clip_ids);
    assert_eq!(back.clips, data.clips);
    assert_eq!(back.captions, data.captions);
    assert_eq!(back.relevance.data(), data.relevance.data());
    assert_eq!(back.n_train(), data.n_train());

    let mut short = cfg.clone();
    short.optim.steps = 5;
    short.rerank.steps = 5;
    let ck = run_train(&short, &back).unwrap().checkpoint;
    let path = dir.path().join("m.ckpt");
    ck.save(&path).unwrap();
    let loaded = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(loaded.to_bytes(), ck.to_bytes());
    let a = run_eval(&short, &back, &ck).unwrap();
    let b = run_eval(&short, &back, &loaded).unwrap();
    assert_eq!(a.to_records(""), b.to_records(""));
}

#[test]
fn eval_rejects_mismatched_checkpoint() {
    let cfg = tiny();
    let (data, _) = generate_synthetic::<f32>(&cfg.data, cfg.seed).unwrap();
    let mut other = cfg.clone();
    other.data.frame_dim = 32;
    other.optim.steps = 0;
    other.rerank.steps = 0;
    let (other_data, _) = generate_synthetic::<f32>(&other.data, 1).unwrap();
    let ck = run_train(&other, &other_data).unwrap().checkpoint;
    assert!(matches!(run_eval(&cfg, &data, &ck), Err(Error::Dimension { .. })));
}

#[test]
fn eval_needs_a_reranker_when_enabled() {
    let mut cfg = tiny();
    cfg.rerank.enabled = false;
    cfg.optim.steps = 3;
    let (data, _) = generate_synthetic::<f32>(&cfg.data, cfg.seed).unwrap();
    let ck = run_train(&cfg, &data).unwrap().checkpoint;
    assert!(ck.cross.is_none());
    assert!(run_eval(&cfg, &data, &ck).is_ok());
    cfg.rerank.enabled = true;
    assert!(matches!(run_eval(&cfg, &data, &ck), Err(Error::Config(_))));
}

#[test]
fn ablation_table_has_all_rows() {
    let mut cfg = tiny();
    cfg.optim.steps = 20;
    cfg.rerank.steps = 20;
    let (data, _) = generate_synthetic::<f32>(&cfg.data, cfg.seed).unwrap();
    let table = ablation_run(&cfg, &data).unwrap();
    for name in ["full", "wo_rerank", "wo_temporal", "wo_temporal_rerank"] {
        let m = table.get(name).unwrap();
        assert!((0.0..=1.0).contains(&m.map_avg) && (0.0..=1.0).contains(&m.ndcg_avg));
    }
    let text = table.to_text();
    assert_eq!(text.lines().count(), 5);
}
