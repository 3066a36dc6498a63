//! Three-stage training: autoencoder, then supervisor, then the joint
//! adversarial game with periodic Fréchet-scored checkpoints.

use std::fs;
use std::io::Write;
use std::path::Path;

use chrono::NaiveDate;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gan::{
    autoencoder_grads, discriminator_grads, generator_grads, profiles_to_batch,
    reconstruction_loss, sample_noise_with, supervisor_grads, supervisor_loss, BundleConfig,
    GanBundle, GeneratorObjective,
};
use crate::ingest::{LoadProfile, ProfileSet, Provenance};
use crate::selection::{frechet_distance, select_best, summarize, GaussianSummary, Score};
use crate::seqnet::{clip_global_norm, AdamState, NetworkParams, SeqBatch};
use crate::STEPS;

pub const CHECKPOINT_FORMAT: u32 = 1;

/// Profiles pushed through the networks at once outside of training.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub network: BundleConfig,
    pub batch_size: usize,
    pub ae_epochs: u64,
    pub sup_epochs: u64,
    pub adv_epochs: u64,
    pub lr: f64,
    /// Weight of the supervised loss inside the generator objective.
    pub eta_sup: f64,
    /// Whether that supervised term also trains the generator.
    pub sup_into_generator: bool,
    /// Use `-ln D(fake)` for the generator instead of `ln(1 - D(fake))`.
    pub non_saturating: bool,
    pub checkpoint_every: u64,
    /// Generated profiles per checkpoint score.
    pub score_samples: usize,
    pub grad_clip: f64,
    /// Share of profiles held out for checkpoint scoring.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            network: BundleConfig::default(),
            batch_size: 128,
            ae_epochs: 1000,
            sup_epochs: 1000,
            adv_epochs: 10000,
            lr: 0.0005,
            eta_sup: 1.0,
            sup_into_generator: true,
            non_saturating: false,
            checkpoint_every: 100,
            score_samples: 1024,
            grad_clip: 5.0,
            test_fraction: 0.2,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.network.validate()?;
        let check = |ok: bool, what: &str| if ok { Ok(()) } else { Err(Error::arg(what.to_string())) };
        check(self.batch_size > 0, "batch_size must be positive")?;
        check(self.ae_epochs > 0 && self.sup_epochs > 0, "epoch counts must be positive")?;
        check(self.checkpoint_every > 0, "checkpoint_every must be positive")?;
        check(
            self.adv_epochs >= self.checkpoint_every,
            "adv_epochs must cover at least one checkpoint",
        )?;
        check(self.lr.is_finite() && self.lr > 0.0, "lr must be positive")?;
        check(self.eta_sup.is_finite() && self.eta_sup >= 0.0, "eta_sup must be non-negative")?;
        check(self.grad_clip.is_finite() && self.grad_clip > 0.0, "grad_clip must be positive")?;
        check(self.score_samples >= 2, "score_samples must be at least 2")?;
        check(
            self.test_fraction > 0.0 && self.test_fraction < 1.0,
            "test_fraction must lie in (0, 1)",
        )
    }

    /// SHA-256 of the canonical JSON form.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }

    fn objective(&self) -> GeneratorObjective {
        GeneratorObjective {
            eta_sup: self.eta_sup,
            sup_into_generator: self.sup_into_generator,
            non_saturating: self.non_saturating,
        }
    }
}

/// Position of the training random stream, enough to resume it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngCursor {
    pub seed: u64,
    /// ChaCha word position, as a decimal string since it is 128-bit.
    #[serde(with = "u128_string")]
    pub word_pos: u128,
}

mod u128_string {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &u128, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&v.to_string())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u128, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format_version: u32,
    pub epoch: u64,
    pub frechet: Option<f64>,
    pub config: TrainConfig,
    pub config_digest: String,
    pub rng_cursor: RngCursor,
    pub bundle: GanBundle,
}

impl Checkpoint {
    pub fn new(bundle: GanBundle, config: TrainConfig, epoch: u64, frechet: Option<f64>, rng_cursor: RngCursor) -> Self {
        Checkpoint {
            format_version: CHECKPOINT_FORMAT,
            epoch,
            frechet,
            config,
            config_digest: config.digest(),
            rng_cursor,
            bundle,
        }
    }

    pub fn to_json(&self) -> Result<Vec<u8>> {
        let mut out = serde_json::to_vec(self)?;
        out.push(b'\n');
        Ok(out)
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let parse = |e: serde_json::Error| Error::Parse {
            line: e.line() as u64,
            message: format!("corrupt checkpoint: {e}"),
        };
        let value: serde_json::Value = serde_json::from_slice(bytes).map_err(parse)?;
        match value.get("format_version").and_then(|v| v.as_u64()) {
            Some(v) if v == CHECKPOINT_FORMAT as u64 => {}
            Some(v) => {
                return Err(Error::Format(format!(
                    "checkpoint format {v} is not supported (expected {CHECKPOINT_FORMAT})"
                )))
            }
            None => return Err(Error::Format("checkpoint has no format_version".into())),
        }
        // Re-parse from the bytes rather than the Value so floats keep
        // their exact round-trip parsing.
        let ckpt: Checkpoint = serde_json::from_slice(bytes).map_err(parse)?;
        if ckpt.config.network != ckpt.bundle.config {
            return Err(Error::Format("checkpoint config and networks disagree".into()));
        }
        Ok(ckpt)
    }
}

/// Writes to a sibling temporary file, then renames over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::arg(format!("{} is not a file path", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    write_atomic(path, &ckpt.to_json()?)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::from_json(&fs::read(path)?)
}

// ---------------------------------------------------------------------------
// Progress reporting

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Autoencoder,
    Supervisor,
    Joint,
}

/// Hooks called during training. All methods default to doing nothing.
pub trait TrainObserver {
    fn on_epoch(&mut self, _stage: Stage, _epoch: u64, _losses: &[f64]) {}

    /// Called with every scored checkpoint; an error aborts training.
    fn on_checkpoint(&mut self, _ckpt: &Checkpoint) -> Result<()> {
        Ok(())
    }
}

impl TrainObserver for () {}

// ---------------------------------------------------------------------------
// Loss traces

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JointEpoch {
    pub epoch: u64,
    pub l_s: f64,
    pub l_g: f64,
    pub l_d: f64,
    pub frechet: Option<f64>,
}

/// Writes `epoch,<column>` rows for a single-loss trace indexed from epoch 1.
pub fn write_trace<W: Write>(column: &str, trace: &[f64], mut sink: W) -> Result<()> {
    writeln!(sink, "epoch,{column}")?;
    for (i, v) in trace.iter().enumerate() {
        writeln!(sink, "{},{v}", i + 1)?;
    }
    Ok(())
}

pub fn write_joint_trace<W: Write>(trace: &[JointEpoch], mut sink: W) -> Result<()> {
    writeln!(sink, "epoch,l_s,l_g,l_d,frechet")?;
    for e in trace {
        let f = e.frechet.map(|v| v.to_string()).unwrap_or_default();
        writeln!(sink, "{},{},{},{},{f}", e.epoch, e.l_s, e.l_g, e.l_d)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Training stages

fn require_data(set: &ProfileSet, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::arg(format!("{what} profile set is empty")));
    }
    Ok(())
}

fn check_bundle(bundle: &GanBundle, cfg: &TrainConfig) -> Result<()> {
    if bundle.config != cfg.network {
        return Err(Error::arg("bundle networks do not match the training config"));
    }
    Ok(())
}

fn shuffled(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    order
}

fn stage_rng(seed: u64, stage: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stage);
    rng
}

fn clipped_step(
    adam: &mut AdamState,
    params: &mut NetworkParams,
    grads: &NetworkParams,
    lr: f64,
) -> Result<()> {
    adam.step(params, grads, lr)?;
    if !params.is_finite() {
        return Err(Error::numeric("parameters after update"));
    }
    Ok(())
}

/// Step 1: minimize reconstruction loss over encoder and recovery. Returns
/// the mean loss per epoch.
pub fn train_autoencoder(
    bundle: &mut GanBundle,
    train: &ProfileSet,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_bundle(bundle, cfg)?;
    require_data(train, "training")?;
    let data = profiles_to_batch(train.iter());
    let mut rng = stage_rng(cfg.seed, 1);
    let mut adam_e = AdamState::for_params(&bundle.encoder);
    let mut adam_r = AdamState::for_params(&bundle.recovery);
    let mut trace = Vec::with_capacity(cfg.ae_epochs as usize);
    for epoch in 1..=cfg.ae_epochs {
        let mut total = 0.0;
        for idx in shuffled(data.batch(), &mut rng).chunks(cfg.batch_size) {
            let x = data.select(idx);
            let (loss, mut ge, mut gr) = autoencoder_grads(bundle, &x)?;
            clip_global_norm(&mut [&mut ge, &mut gr], cfg.grad_clip);
            clipped_step(&mut adam_e, &mut bundle.encoder, &ge, cfg.lr)?;
            clipped_step(&mut adam_r, &mut bundle.recovery, &gr, cfg.lr)?;
            total += loss * idx.len() as f64;
        }
        let mean = total / data.batch() as f64;
        observer.on_epoch(Stage::Autoencoder, epoch, &[mean]);
        trace.push(mean);
    }
    Ok(trace)
}

/// Encoder output for every profile, batch by batch.
pub fn encode_all(bundle: &GanBundle, set: &ProfileSet) -> Result<SeqBatch> {
    let data = profiles_to_batch(set.iter());
    let mut parts = Vec::new();
    for start in (0..data.batch()).step_by(EVAL_CHUNK) {
        let idx: Vec<usize> = (start..(start + EVAL_CHUNK).min(data.batch())).collect();
        parts.push(bundle.encode(&data.select(&idx))?);
    }
    SeqBatch::concat_batches(&parts)
}

/// Mean squared error per value of `decode(encode(x))` over a set.
pub fn reconstruction_mse(bundle: &GanBundle, set: &ProfileSet) -> Result<f64> {
    require_data(set, "input")?;
    let mut total = 0.0;
    for chunk in set.profiles.chunks(EVAL_CHUNK) {
        let x = profiles_to_batch(chunk);
        let xr = bundle.decode(&bundle.encode(&x)?)?;
        total += reconstruction_loss(&x, &xr)? * chunk.len() as f64;
    }
    Ok(total / (set.len() * STEPS) as f64)
}

/// Supervised one-step loss of the supervisor on real encodings, averaged
/// over the set.
pub fn supervised_loss_on(bundle: &GanBundle, set: &ProfileSet) -> Result<f64> {
    require_data(set, "input")?;
    let mut total = 0.0;
    for chunk in set.profiles.chunks(EVAL_CHUNK) {
        let h = bundle.encode(&profiles_to_batch(chunk))?;
        total += supervisor_loss(&h, &bundle.supervise_next(&h)?)? * chunk.len() as f64;
    }
    Ok(total / set.len() as f64)
}

/// Step 2: minimize the one-step supervised loss over the supervisor only,
/// on encodings of real profiles.
pub fn train_supervisor(
    bundle: &mut GanBundle,
    train: &ProfileSet,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    check_bundle(bundle, cfg)?;
    require_data(train, "training")?;
    let encoded = encode_all(bundle, train)?;
    let mut rng = stage_rng(cfg.seed, 2);
    let mut adam = AdamState::for_params(&bundle.supervisor);
    let mut trace = Vec::with_capacity(cfg.sup_epochs as usize);
    for epoch in 1..=cfg.sup_epochs {
        let mut total = 0.0;
        for idx in shuffled(encoded.batch(), &mut rng).chunks(cfg.batch_size) {
            let (loss, mut g) = supervisor_grads(bundle, &encoded.select(idx))?;
            clip_global_norm(&mut [&mut g], cfg.grad_clip);
            clipped_step(&mut adam, &mut bundle.supervisor, &g, cfg.lr)?;
            total += loss * idx.len() as f64;
        }
        let mean = total / encoded.batch() as f64;
        observer.on_epoch(Stage::Supervisor, epoch, &[mean]);
        trace.push(mean);
    }
    Ok(trace)
}

pub struct JointOutcome {
    pub best: Checkpoint,
    pub scores: Vec<Score>,
    pub trace: Vec<JointEpoch>,
}

/// Seed for the noise behind the checkpoint scored at `epoch`, independent
/// of the training stream.
fn scoring_seed(seed: u64, epoch: u64) -> u64 {
    seed ^ epoch.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ 0x5C0E
}

/// Step 3: per mini-batch, (a) a supervised step on real encodings,
/// (b) a generator/supervisor step through the fixed discriminator, and
/// (c) a discriminator step. Every `checkpoint_every` epochs the model is
/// scored by the Fréchet distance of generated profiles against `val`.
pub fn train_joint(
    bundle: &mut GanBundle,
    train: &ProfileSet,
    val: &ProfileSet,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<JointOutcome> {
    cfg.validate()?;
    check_bundle(bundle, cfg)?;
    require_data(train, "training")?;
    if val.len() < 2 {
        return Err(Error::arg("validation set needs at least 2 profiles"));
    }
    let reference = summarize(val)?;
    let encoded = encode_all(bundle, train)?;
    let latent = cfg.network.latent_dim;
    let objective = cfg.objective();
    let mut rng = stage_rng(cfg.seed, 3);
    let mut adam_g = AdamState::for_params(&bundle.generator);
    let mut adam_s = AdamState::for_params(&bundle.supervisor);
    let mut adam_d = AdamState::for_params(&bundle.discriminator);

    let mut trace = Vec::with_capacity(cfg.adv_epochs as usize);
    let mut scores = Vec::new();
    let mut best: Option<Checkpoint> = None;
    for epoch in 1..=cfg.adv_epochs {
        let (mut ls, mut lg, mut ld) = (0.0, 0.0, 0.0);
        for idx in shuffled(encoded.batch(), &mut rng).chunks(cfg.batch_size) {
            let real = encoded.select(idx);
            let w = idx.len() as f64;

            let (loss_s, mut gs) = supervisor_grads(bundle, &real)?;
            clip_global_norm(&mut [&mut gs], cfg.grad_clip);
            clipped_step(&mut adam_s, &mut bundle.supervisor, &gs, cfg.lr)?;

            let z = sample_noise_with(&mut rng, idx.len(), latent);
            let mut pass = generator_grads(bundle, &z, objective)?;
            clip_global_norm(&mut [&mut pass.grad_generator, &mut pass.grad_supervisor], cfg.grad_clip);
            clipped_step(&mut adam_g, &mut bundle.generator, &pass.grad_generator, cfg.lr)?;
            clipped_step(&mut adam_s, &mut bundle.supervisor, &pass.grad_supervisor, cfg.lr)?;

            let (loss_d, mut gd) = discriminator_grads(bundle, &real, &pass.fake_hidden)?;
            clip_global_norm(&mut [&mut gd], cfg.grad_clip);
            clipped_step(&mut adam_d, &mut bundle.discriminator, &gd, cfg.lr)?;

            ls += loss_s * w;
            lg += pass.l_g * w;
            ld += loss_d * w;
        }
        let n = encoded.batch() as f64;
        let mut row = JointEpoch {
            epoch,
            l_s: ls / n,
            l_g: lg / n,
            l_d: ld / n,
            frechet: None,
        };
        if epoch % cfg.checkpoint_every == 0 {
            let frechet = score_bundle(bundle, &reference, cfg.score_samples, scoring_seed(cfg.seed, epoch))?;
            row.frechet = Some(frechet);
            let cursor = RngCursor {
                seed: cfg.seed,
                word_pos: rng.get_word_pos(),
            };
            let ckpt = Checkpoint::new(bundle.clone(), *cfg, epoch, Some(frechet), cursor);
            observer.on_checkpoint(&ckpt)?;
            scores.push(Score { epoch, frechet });
            // Strictly lower only: an equal score keeps the earlier epoch.
            if best.as_ref().is_none_or(|b| frechet < b.frechet.unwrap_or(f64::INFINITY)) {
                best = Some(ckpt);
            }
        }
        observer.on_epoch(Stage::Joint, epoch, &[row.l_s, row.l_g, row.l_d]);
        trace.push(row);
    }
    let best = best.ok_or_else(|| Error::numeric("no checkpoint scored"))?;
    debug_assert_eq!(scores[select_best(&scores)?].epoch, best.epoch);
    Ok(JointOutcome { best, scores, trace })
}

/// Fréchet distance of `n` generated profiles against a reference summary.
pub fn score_bundle(bundle: &GanBundle, reference: &GaussianSummary, n: usize, seed: u64) -> Result<f64> {
    let gen = generate_profiles(bundle, n, seed)?;
    frechet_distance(&summarize(&gen)?, reference)
}

/// Decodes `n` generated hidden sequences into profiles.
pub fn generate_profiles(bundle: &GanBundle, n: usize, seed: u64) -> Result<ProfileSet> {
    if n == 0 {
        return Err(Error::arg("need at least one profile"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let date = NaiveDate::from_ymd_opt(1970, 1, 1).expect("valid date");
    let mut profiles = Vec::with_capacity(n);
    while profiles.len() < n {
        let b = EVAL_CHUNK.min(n - profiles.len());
        let z = sample_noise_with(&mut rng, b, bundle.config.latent_dim);
        let x = bundle.generate(&z)?;
        for row in crate::gan::batch_to_values(&x)? {
            let k = profiles.len();
            profiles.push(LoadProfile::new(format!("gen-{k:07}"), date, row));
        }
    }
    Ok(ProfileSet::new(profiles, Provenance::Generated))
}

/// Everything one full training run produces.
pub struct TrainingRun {
    pub ae_trace: Vec<f64>,
    pub sup_trace: Vec<f64>,
    pub joint: JointOutcome,
    pub final_bundle: GanBundle,
}

/// Initializes a bundle from the config seed and runs all three stages.
pub fn train_all(
    train: &ProfileSet,
    val: &ProfileSet,
    cfg: &TrainConfig,
    observer: &mut dyn TrainObserver,
) -> Result<TrainingRun> {
    cfg.validate()?;
    let mut bundle = GanBundle::init(cfg.network, cfg.seed)?;
    let ae_trace = train_autoencoder(&mut bundle, train, cfg, observer)?;
    let sup_trace = train_supervisor(&mut bundle, train, cfg, observer)?;
    let joint = train_joint(&mut bundle, train, val, cfg, observer)?;
    Ok(TrainingRun {
        ae_trace,
        sup_trace,
        joint,
        final_bundle: bundle,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::synth_reference;

    fn quick_config() -> TrainConfig {
        TrainConfig {
            network: BundleConfig::reduced(4, 1),
            batch_size: 16,
            ae_epochs: 3,
            sup_epochs: 3,
            adv_epochs: 4,
            checkpoint_every: 2,
            score_samples: 32,
            seed: 5,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn config_defaults_and_validation() {
        let c: TrainConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(c, TrainConfig::default());
        assert_eq!((c.batch_size, c.adv_epochs, c.lr), (128, 10000, 0.0005));
        assert!(serde_json::from_str::<TrainConfig>(r#"{"batchsize": 3}"#).is_err());
        let bad = TrainConfig { lr: -1.0, ..c };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { adv_epochs: 50, ..c };
        assert!(bad.validate().is_err());
        assert_ne!(c.digest(), TrainConfig { seed: 1, ..c }.digest());
    }

    #[test]
    fn stages_touch_only_their_networks() {
        let cfg = quick_config();
        let data = synth_reference(40, 1).unwrap();
        let mut b = GanBundle::init(cfg.network, cfg.seed).unwrap();
        let before = b.clone();
        train_autoencoder(&mut b, &data, &cfg, &mut ()).unwrap();
        assert_ne!(b.encoder, before.encoder);
        assert_ne!(b.recovery, before.recovery);
        assert_eq!(b.generator, before.generator);
        assert_eq!(b.supervisor, before.supervisor);
        assert_eq!(b.discriminator, before.discriminator);

        let after_ae = b.clone();
        train_supervisor(&mut b, &data, &cfg, &mut ()).unwrap();
        assert_eq!(b.encoder.digest(), after_ae.encoder.digest());
        assert_eq!(b.recovery.digest(), after_ae.recovery.digest());
        assert_ne!(b.supervisor, after_ae.supervisor);
        assert_eq!(b.generator, after_ae.generator);

        let after_sup = b.clone();
        let out = train_joint(&mut b, &data, &data, &cfg, &mut ()).unwrap();
        assert_eq!(b.encoder.digest(), after_sup.encoder.digest());
        assert_eq!(b.recovery.digest(), after_sup.recovery.digest());
        assert_ne!(b.generator, after_sup.generator);
        assert_ne!(b.discriminator, after_sup.discriminator);
        assert_eq!(out.scores.len(), 2);
        assert_eq!(out.trace.len(), 4);
        assert!(out.scores.iter().all(|s| s.frechet.is_finite() && s.frechet >= 0.0));
        let min = out.scores.iter().map(|s| s.frechet).fold(f64::INFINITY, f64::min);
        assert_eq!(out.best.frechet, Some(min));
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = quick_config();
        let data = synth_reference(30, 2).unwrap();
        let a = train_all(&data, &data, &cfg, &mut ()).unwrap();
        let b = train_all(&data, &data, &cfg, &mut ()).unwrap();
        assert_eq!(a.joint.best.to_json().unwrap(), b.joint.best.to_json().unwrap());
        assert_eq!(a.ae_trace, b.ae_trace);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let cfg = quick_config();
        let bundle = GanBundle::init(cfg.network, 9).unwrap();
        let cursor = RngCursor { seed: 9, word_pos: u128::MAX - 3 };
        let ckpt = Checkpoint::new(bundle, cfg, 200, Some(0.1 + 0.2), cursor);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.ckpt");
        save_checkpoint(&ckpt, &path).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.frechet.unwrap().to_bits(), (0.1_f64 + 0.2).to_bits());
        for (a, b) in back.bundle.networks().iter().zip(ckpt.bundle.networks()) {
            assert!(a.1.as_slice().iter().zip(b.1.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn checkpoint_version_and_corruption() {
        let cfg = quick_config();
        let ckpt = Checkpoint::new(
            GanBundle::init(cfg.network, 1).unwrap(),
            cfg,
            1,
            None,
            RngCursor { seed: 0, word_pos: 0 },
        );
        let text = String::from_utf8(ckpt.to_json().unwrap()).unwrap();
        let future = text.replacen("\"format_version\":1", "\"format_version\":99", 1);
        assert!(matches!(Checkpoint::from_json(future.as_bytes()), Err(Error::Format(_))));
        assert!(matches!(
            Checkpoint::from_json(&text.as_bytes()[..text.len() / 2]),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn generation_shape_and_determinism() {
        let bundle = GanBundle::init(BundleConfig::reduced(4, 1), 3).unwrap();
        let a = generate_profiles(&bundle, 300, 4).unwrap();
        assert_eq!(a.len(), 300);
        assert_eq!(a.provenance, Provenance::Generated);
        assert!(a.iter().all(|p| p.values.iter().all(|v| (0.0..=1.0).contains(v))));
        assert_eq!(a, generate_profiles(&bundle, 300, 4).unwrap());
        assert_ne!(a, generate_profiles(&bundle, 300, 5).unwrap());
        assert!(generate_profiles(&bundle, 0, 4).is_err());
    }

    #[test]
    fn trace_csv() {
        let mut buf = Vec::new();
        write_trace("l_r", &[0.5, 0.25], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "epoch,l_r\n1,0.5\n2,0.25\n");
        let mut buf = Vec::new();
        let rows = [
            JointEpoch { epoch: 1, l_s: 1.0, l_g: -0.5, l_d: 1.25, frechet: None },
            JointEpoch { epoch: 2, l_s: 1.0, l_g: -0.5, l_d: 1.25, frechet: Some(2.0) },
        ];
        write_joint_trace(&rows, &mut buf).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,l_s,l_g,l_d,frechet\n1,1,-0.5,1.25,\n2,1,-0.5,1.25,2\n"
        );
    }
}
