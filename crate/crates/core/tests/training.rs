use loadgan::gan::{BundleConfig, GanBundle};
use loadgan::ingest::synth_reference;
use loadgan::trainer::{
    load_checkpoint, reconstruction_mse, save_checkpoint, train_all, train_autoencoder,
    Checkpoint, TrainConfig,
};

fn small_config() -> TrainConfig {
    TrainConfig {
        network: BundleConfig::reduced(8, 1),
        batch_size: 32,
        ae_epochs: 60,
        sup_epochs: 3,
        adv_epochs: 4,
        checkpoint_every: 2,
        score_samples: 64,
        seed: 11,
        ..TrainConfig::default()
    }
}

#[test]
fn full_batch_reconstruction_loss_never_increases() {
    let data = synth_reference(32, 4).unwrap();
    let cfg = small_config();
    let mut bundle = GanBundle::init(cfg.network, cfg.seed).unwrap();
    let before = reconstruction_mse(&bundle, &data).unwrap();
    let trace = train_autoencoder(&mut bundle, &data, &cfg, &mut ()).unwrap();
    assert_eq!(trace.len(), 60);
    for (e, w) in trace.windows(2).enumerate() {
        assert!(w[1] <= w[0], "loss rose after epoch {}: {} -> {}", e + 1, w[0], w[1]);
    }
    assert!(reconstruction_mse(&bundle, &data).unwrap() < before);
}

#[test]
fn best_checkpoint_survives_a_file_round_trip() {
    let data = synth_reference(80, 6).unwrap();
    let (train, val) = loadgan::ingest::split(&data, 0.25, 6).unwrap();
    let cfg = TrainConfig {
        ae_epochs: 2,
        ..small_config()
    };
    let run = train_all(&train, &val, &cfg, &mut ()).unwrap();
    let best = &run.joint.best;
    assert_eq!(run.joint.scores.len(), 2);
    assert!(run
        .joint
        .scores
        .iter()
        .all(|s| s.frechet.is_finite() && s.frechet >= 0.0));
    let min = run
        .joint
        .scores
        .iter()
        .map(|s| s.frechet)
        .fold(f64::INFINITY, f64::min);
    assert_eq!(best.frechet, Some(min));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.ckpt");
    save_checkpoint(best, &path).unwrap();
    let loaded: Checkpoint = load_checkpoint(&path).unwrap();
    assert_eq!(&loaded, best);
    assert_eq!(loaded.to_json().unwrap(), best.to_json().unwrap());
}
