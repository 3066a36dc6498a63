//! The five networks (encoder, recovery, generator, supervisor,
//! discriminator) and their losses.
//!
//! Real profiles are embedded by the encoder, the recovery network maps
//! hidden sequences back to load values, the generator turns noise into a
//! hidden sequence that the supervisor refines one step ahead, and the
//! discriminator scores whole hidden sequences.

use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::LoadProfile;
use crate::seqnet::{Head, NetworkConfig, NetworkParams, SeqBatch};
use crate::STEPS;

/// Probabilities are clamped to `[PROB_CLAMP, 1 - PROB_CLAMP]` before logs.
pub const PROB_CLAMP: f64 = 1e-12;

/// Network sizes for a bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BundleConfig {
    /// Width of the hidden representation and of the noise.
    pub latent_dim: usize,
    pub hidden_units: usize,
    pub num_layers: usize,
}

impl Default for BundleConfig {
    fn default() -> Self {
        BundleConfig {
            latent_dim: 32,
            hidden_units: 32,
            num_layers: 5,
        }
    }
}

impl BundleConfig {
    /// Smaller networks whose latent width equals the hidden width.
    pub fn reduced(hidden_units: usize, num_layers: usize) -> Self {
        BundleConfig {
            latent_dim: hidden_units,
            hidden_units,
            num_layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim <= 1 {
            return Err(Error::arg("latent width must exceed the single input feature"));
        }
        self.encoder().validate()
    }

    fn sized(&self, c: NetworkConfig) -> NetworkConfig {
        c.with_size(self.hidden_units, self.num_layers)
    }

    pub fn encoder(&self) -> NetworkConfig {
        self.sized(NetworkConfig::new(1, self.latent_dim))
    }

    pub fn recovery(&self) -> NetworkConfig {
        self.sized(NetworkConfig::new(self.latent_dim, 1))
    }

    pub fn generator(&self) -> NetworkConfig {
        self.sized(NetworkConfig::new(self.latent_dim, self.latent_dim))
    }

    /// Forward-only, so each prediction sees only the prefix up to its step.
    pub fn supervisor(&self) -> NetworkConfig {
        self.sized(NetworkConfig::new(self.latent_dim, self.latent_dim)).unidirectional()
    }

    pub fn discriminator(&self) -> NetworkConfig {
        self.sized(NetworkConfig::new(self.latent_dim, 1)).with_head(Head::FinalState)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GanBundle {
    pub config: BundleConfig,
    pub encoder: NetworkParams,
    pub recovery: NetworkParams,
    pub generator: NetworkParams,
    pub supervisor: NetworkParams,
    pub discriminator: NetworkParams,
}

impl GanBundle {
    /// Random initialization; each network draws from its own seed stream.
    pub fn init(config: BundleConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let sub = |k: u64| seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k);
        Ok(GanBundle {
            config,
            encoder: NetworkParams::init(config.encoder(), sub(1)),
            recovery: NetworkParams::init(config.recovery(), sub(2)),
            generator: NetworkParams::init(config.generator(), sub(3)),
            supervisor: NetworkParams::init(config.supervisor(), sub(4)),
            discriminator: NetworkParams::init(config.discriminator(), sub(5)),
        })
    }

    pub fn zeros(config: BundleConfig) -> Result<Self> {
        config.validate()?;
        Ok(GanBundle {
            config,
            encoder: NetworkParams::zeros(config.encoder()),
            recovery: NetworkParams::zeros(config.recovery()),
            generator: NetworkParams::zeros(config.generator()),
            supervisor: NetworkParams::zeros(config.supervisor()),
            discriminator: NetworkParams::zeros(config.discriminator()),
        })
    }

    pub fn networks(&self) -> [(&'static str, &NetworkParams); 5] {
        [
            ("encoder", &self.encoder),
            ("recovery", &self.recovery),
            ("generator", &self.generator),
            ("supervisor", &self.supervisor),
            ("discriminator", &self.discriminator),
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.networks().iter().all(|(_, p)| p.is_finite())
    }

    fn check_hidden(&self, h: &SeqBatch) -> Result<()> {
        if h.features() != self.config.latent_dim {
            return Err(Error::shape(format!(
                "hidden sequence has {} features, expected {}",
                h.features(),
                self.config.latent_dim
            )));
        }
        Ok(())
    }

    pub fn encode(&self, x: &SeqBatch) -> Result<SeqBatch> {
        self.encoder.forward(x)
    }

    pub fn decode(&self, h: &SeqBatch) -> Result<SeqBatch> {
        self.check_hidden(h)?;
        self.recovery.forward(h)
    }

    /// Position `t` holds the prediction for step `t + 1`.
    pub fn supervise_next(&self, h: &SeqBatch) -> Result<SeqBatch> {
        self.check_hidden(h)?;
        self.supervisor.forward(h)
    }

    /// Generator output refined by the supervisor: step 0 comes from the
    /// generator, every later step is the supervisor's prediction for it.
    pub fn generate_hidden(&self, z: &SeqBatch) -> Result<SeqBatch> {
        self.check_hidden(z)?;
        let g = self.generator.forward(z)?;
        let s = self.supervisor.forward(&g)?;
        Ok(compose_generated(&g, &s))
    }

    /// One probability per sequence that it came from real data.
    pub fn discriminate(&self, h: &SeqBatch) -> Result<Vec<f64>> {
        self.check_hidden(h)?;
        Ok(self.discriminator.forward(h)?.iter().copied().collect())
    }

    /// Load profiles decoded from fresh noise.
    pub fn generate(&self, z: &SeqBatch) -> Result<SeqBatch> {
        let h = self.generate_hidden(z)?;
        Ok(self.decode(&h)?.map(|v| v.clamp(0.0, 1.0)))
    }
}

/// `[g_0, s_0, s_1, ..., s_{T-2}]`.
fn compose_generated(g: &SeqBatch, s: &SeqBatch) -> SeqBatch {
    let mut out = s.clone();
    {
        let o = out.time_major_mut();
        let steps = o.len_of(Axis(0));
        for t in (1..steps).rev() {
            let prev = s.time_major().index_axis(Axis(0), t - 1).to_owned();
            o.index_axis_mut(Axis(0), t).assign(&prev);
        }
        o.index_axis_mut(Axis(0), 0)
            .assign(&g.time_major().index_axis(Axis(0), 0));
    }
    out
}

/// `[B, T, latent]` standard normal noise.
pub fn sample_noise(batch: usize, latent_dim: usize, seed: u64) -> SeqBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_noise_with(&mut rng, batch, latent_dim)
}

pub fn sample_noise_with(rng: &mut ChaCha8Rng, batch: usize, latent_dim: usize) -> SeqBatch {
    SeqBatch::from_fn(batch, STEPS, latent_dim, |_, _, _| StandardNormal.sample(rng))
}

/// `[B, 24, 1]` batch from profiles.
pub fn profiles_to_batch<'a, I>(profiles: I) -> SeqBatch
where
    I: IntoIterator<Item = &'a LoadProfile>,
{
    let rows: Vec<&LoadProfile> = profiles.into_iter().collect();
    SeqBatch::from_fn(rows.len(), STEPS, 1, |b, t, _| rows[b].values[t])
}

pub fn batch_to_values(x: &SeqBatch) -> Result<Vec<[f64; STEPS]>> {
    if x.steps() != STEPS || x.features() != 1 {
        return Err(Error::shape(format!("expected [B, {STEPS}, 1], got {:?}", x.dims())));
    }
    Ok((0..x.batch())
        .map(|b| {
            let mut v = [0.0; STEPS];
            for (t, slot) in v.iter_mut().enumerate() {
                *slot = x.get(b, t, 0);
            }
            v
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Losses. Each `*_grad` variant also returns the gradient with respect to
// its first (predicted) argument.

fn same_dims(a: &SeqBatch, b: &SeqBatch) -> Result<()> {
    if a.dims() != b.dims() {
        return Err(Error::shape(format!("{:?} vs {:?}", a.dims(), b.dims())));
    }
    Ok(())
}

/// Batch mean of the per-sequence summed squared error.
pub fn reconstruction_loss(x: &SeqBatch, x_prime: &SeqBatch) -> Result<f64> {
    reconstruction_loss_grad(x, x_prime).map(|(l, _)| l)
}

/// Loss and its gradient with respect to `x_prime`.
pub fn reconstruction_loss_grad(x: &SeqBatch, x_prime: &SeqBatch) -> Result<(f64, SeqBatch)> {
    same_dims(x, x_prime)?;
    let inv_b = 1.0 / x.batch() as f64;
    let mut grad = x_prime.clone();
    let mut sum = 0.0;
    for (g, &t) in grad.time_major_mut().iter_mut().zip(x.time_major().iter()) {
        let d = *g - t;
        sum += d * d;
        *g = 2.0 * d * inv_b;
    }
    Ok((sum * inv_b, grad))
}

/// Batch mean of `sum_t ||h_{t+1} - h_sup_t||^2` over `t < T - 1`.
pub fn supervisor_loss(h: &SeqBatch, h_sup: &SeqBatch) -> Result<f64> {
    supervisor_loss_grad(h, h_sup).map(|(l, _, _)| l)
}

/// Loss with gradients with respect to `h_sup` and to `h`.
pub fn supervisor_loss_grad(h: &SeqBatch, h_sup: &SeqBatch) -> Result<(f64, SeqBatch, SeqBatch)> {
    same_dims(h, h_sup)?;
    let (b, t, f) = h.dims();
    let inv_b = 1.0 / b as f64;
    let mut d_sup = SeqBatch::zeros(b, t, f);
    let mut d_h = SeqBatch::zeros(b, t, f);
    let mut sum = 0.0;
    {
        let hv = h.time_major();
        let sv = h_sup.time_major();
        let ds = d_sup.time_major_mut();
        for step in 0..t.saturating_sub(1) {
            let target = hv.index_axis(Axis(0), step + 1);
            let pred = sv.index_axis(Axis(0), step);
            let mut out = ds.index_axis_mut(Axis(0), step);
            for ((o, &p), &y) in out.iter_mut().zip(pred.iter()).zip(target.iter()) {
                let d = p - y;
                sum += d * d;
                *o = 2.0 * d * inv_b;
            }
        }
        let dh = d_h.time_major_mut();
        for step in 1..t {
            let src = ds.index_axis(Axis(0), step - 1);
            let mut dst = dh.index_axis_mut(Axis(0), step);
            dst.zip_mut_with(&src, |a, &g| *a = -g);
        }
    }
    Ok((sum * inv_b, d_sup, d_h))
}

fn clamp_prob(y: f64) -> f64 {
    y.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP)
}

/// Derivative of `ln(clamp(y))`; zero where the clamp is active.
fn dln(y: f64) -> f64 {
    if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&y) {
        1.0 / y
    } else {
        0.0
    }
}

fn dln1m(y: f64) -> f64 {
    if (PROB_CLAMP..=1.0 - PROB_CLAMP).contains(&y) {
        -1.0 / (1.0 - y)
    } else {
        0.0
    }
}

fn mean(v: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = v.len() as f64;
    v.sum::<f64>() / n
}

/// Binary cross-entropy: `-mean(ln y_real) - mean(ln(1 - y_fake))`.
pub fn discriminator_loss(y_real: &[f64], y_fake: &[f64]) -> f64 {
    -mean(y_real.iter().map(|&y| clamp_prob(y).ln())) - mean(y_fake.iter().map(|&y| (1.0 - clamp_prob(y)).ln()))
}

/// Loss with gradients with respect to `y_real` and `y_fake`.
pub fn discriminator_loss_grad(y_real: &[f64], y_fake: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
    let (nr, nf) = (y_real.len() as f64, y_fake.len() as f64);
    (
        discriminator_loss(y_real, y_fake),
        y_real.iter().map(|&y| -dln(y) / nr).collect(),
        y_fake.iter().map(|&y| -dln1m(y) / nf).collect(),
    )
}

/// `mean(ln(1 - y_fake))`, or `-mean(ln y_fake)` when `non_saturating`.
pub fn generator_adv_loss(y_fake: &[f64], non_saturating: bool) -> f64 {
    if non_saturating {
        -mean(y_fake.iter().map(|&y| clamp_prob(y).ln()))
    } else {
        mean(y_fake.iter().map(|&y| (1.0 - clamp_prob(y)).ln()))
    }
}

pub fn generator_adv_loss_grad(y_fake: &[f64], non_saturating: bool) -> (f64, Vec<f64>) {
    let n = y_fake.len() as f64;
    let grad = y_fake
        .iter()
        .map(|&y| if non_saturating { -dln(y) / n } else { dln1m(y) / n })
        .collect();
    (generator_adv_loss(y_fake, non_saturating), grad)
}

fn probs_to_batch(d: &[f64]) -> SeqBatch {
    SeqBatch::from_fn(d.len(), 1, 1, |b, _, _| d[b])
}

// ---------------------------------------------------------------------------
// Gradient passes used by the trainer.

/// Reconstruction loss of `x` with gradients for encoder and recovery.
pub fn autoencoder_grads(bundle: &GanBundle, x: &SeqBatch) -> Result<(f64, NetworkParams, NetworkParams)> {
    let (h, enc_tape) = bundle.encoder.forward_with_tape(x)?;
    let (x_prime, rec_tape) = bundle.recovery.forward_with_tape(&h)?;
    let (loss, d_x_prime) = reconstruction_loss_grad(x, &x_prime)?;
    let mut g_rec = NetworkParams::zeros(*bundle.recovery.config());
    let d_h = bundle.recovery.backward(&rec_tape, &d_x_prime, &mut g_rec)?;
    let mut g_enc = NetworkParams::zeros(*bundle.encoder.config());
    bundle.encoder.backward(&enc_tape, &d_h, &mut g_enc)?;
    Ok((loss, g_enc, g_rec))
}

/// Supervised one-step loss on given (real) hidden sequences, with the
/// supervisor gradient.
pub fn supervisor_grads(bundle: &GanBundle, h: &SeqBatch) -> Result<(f64, NetworkParams)> {
    let (pred, tape) = bundle.supervisor.forward_with_tape(h)?;
    let (loss, d_pred, _) = supervisor_loss_grad(h, &pred)?;
    let mut g = NetworkParams::zeros(*bundle.supervisor.config());
    bundle.supervisor.backward(&tape, &d_pred, &mut g)?;
    Ok((loss, g))
}

/// Options for the generator pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorObjective {
    /// Weight of the one-step supervised loss on generated sequences.
    pub eta_sup: f64,
    /// Let the supervised term's gradient reach the generator as well as the
    /// supervisor.
    pub sup_into_generator: bool,
    pub non_saturating: bool,
}

pub struct GeneratorPass {
    pub l_g: f64,
    /// Supervised loss of the supervisor on the generator's raw output.
    pub l_s: f64,
    pub grad_generator: NetworkParams,
    pub grad_supervisor: NetworkParams,
    /// The composed hidden sequences shown to the discriminator.
    pub fake_hidden: SeqBatch,
}

/// `L_G + eta_sup * L_s` on generated sequences, through a fixed
/// discriminator. Discriminator gradients are discarded.
pub fn generator_grads(bundle: &GanBundle, z: &SeqBatch, obj: GeneratorObjective) -> Result<GeneratorPass> {
    let (g, g_tape) = bundle.generator.forward_with_tape(z)?;
    let (s, s_tape) = bundle.supervisor.forward_with_tape(&g)?;
    let fake = compose_generated(&g, &s);
    let (y, d_tape) = bundle.discriminator.forward_with_tape(&fake)?;
    let y: Vec<f64> = y.iter().copied().collect();
    let (l_g, dy) = generator_adv_loss_grad(&y, obj.non_saturating);
    let mut scratch = NetworkParams::zeros(*bundle.discriminator.config());
    let d_fake = bundle.discriminator.backward(&d_tape, &probs_to_batch(&dy), &mut scratch)?;

    let (l_s, mut d_s, d_g_target) = supervisor_loss_grad(&g, &s)?;
    let mut d_g = SeqBatch::zeros(g.batch(), g.steps(), g.features());
    {
        let dsv = d_s.time_major_mut();
        dsv.mapv_inplace(|v| v * obj.eta_sup);
        let df = d_fake.time_major();
        let steps = df.len_of(Axis(0));
        for t in 1..steps {
            let mut dst = dsv.index_axis_mut(Axis(0), t - 1);
            dst += &df.index_axis(Axis(0), t);
        }
        let dg = d_g.time_major_mut();
        dg.index_axis_mut(Axis(0), 0).assign(&df.index_axis(Axis(0), 0));
        if obj.sup_into_generator {
            dg.scaled_add(obj.eta_sup, d_g_target.time_major());
        }
    }
    let mut grad_supervisor = NetworkParams::zeros(*bundle.supervisor.config());
    let d_g_from_s = bundle.supervisor.backward(&s_tape, &d_s, &mut grad_supervisor)?;
    // The supervisor's input is the generator output; its gradient always
    // reaches the generator through the adversarial term. Only the
    // supervised term's share is optional.
    if obj.sup_into_generator || obj.eta_sup == 0.0 {
        *d_g.time_major_mut() += d_g_from_s.time_major();
    } else {
        let mut adv_only = d_fake.clone();
        adv_only.time_major_mut().index_axis_mut(Axis(0), 0).fill(0.0);
        let shifted = shift_back(&adv_only);
        let mut scratch = NetworkParams::zeros(*bundle.supervisor.config());
        let d = bundle.supervisor.backward(&s_tape, &shifted, &mut scratch)?;
        *d_g.time_major_mut() += d.time_major();
    }
    let mut grad_generator = NetworkParams::zeros(*bundle.generator.config());
    bundle.generator.backward(&g_tape, &d_g, &mut grad_generator)?;
    Ok(GeneratorPass {
        l_g,
        l_s,
        grad_generator,
        grad_supervisor,
        fake_hidden: fake,
    })
}

/// Moves position `t` to `t - 1`, dropping position 0 and zeroing the last.
fn shift_back(x: &SeqBatch) -> SeqBatch {
    let (b, t, f) = x.dims();
    let mut out = SeqBatch::zeros(b, t, f);
    for step in 1..t {
        out.time_major_mut()
            .index_axis_mut(Axis(0), step - 1)
            .assign(&x.time_major().index_axis(Axis(0), step));
    }
    out
}

/// Binary cross-entropy of the discriminator on real and generated hidden
/// sequences, with its gradient.
pub fn discriminator_grads(
    bundle: &GanBundle,
    real_hidden: &SeqBatch,
    fake_hidden: &SeqBatch,
) -> Result<(f64, NetworkParams)> {
    let d = &bundle.discriminator;
    let (yr, tr) = d.forward_with_tape(real_hidden)?;
    let (yf, tf) = d.forward_with_tape(fake_hidden)?;
    let yr: Vec<f64> = yr.iter().copied().collect();
    let yf: Vec<f64> = yf.iter().copied().collect();
    let (loss, dr, df) = discriminator_loss_grad(&yr, &yf);
    let mut g = NetworkParams::zeros(*d.config());
    d.backward(&tr, &probs_to_batch(&dr), &mut g)?;
    d.backward(&tf, &probs_to_batch(&df), &mut g)?;
    Ok((loss, g))
}
