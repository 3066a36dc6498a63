use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::batch::SeqBatch;
use super::lstm::gradients;
use super::params::NetworkParams;
use crate::error::{Error, Result};

/// Coordinates compared per check when the store is larger than this.
const SAMPLED_COORDINATES: usize = 256;
const SAMPLE_SEED: u64 = 0x6772_6164;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckReport {
    /// max |g_a - g_n| / max(1e-8, |g_a| + |g_n|) over the sampled coordinates.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub coordinates: usize,
}

/// Compares `analytic` with central differences of `objective` around `point`.
pub fn check_gradient<F>(
    point: &[f64],
    analytic: &[f64],
    mut objective: F,
    epsilon: f64,
) -> Result<GradCheckReport>
where
    F: FnMut(&[f64]) -> f64,
{
    if !(epsilon > 0.0) {
        return Err(Error::arg(format!("epsilon must be positive, got {epsilon}")));
    }
    if point.len() != analytic.len() {
        return Err(Error::shape("gradient length differs from point length"));
    }
    let indices: Vec<usize> = if point.len() <= SAMPLED_COORDINATES {
        (0..point.len()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(SAMPLE_SEED);
        let mut v = sample(&mut rng, point.len(), SAMPLED_COORDINATES).into_vec();
        v.sort_unstable();
        v
    };

    let mut x = point.to_vec();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        coordinates: indices.len(),
    };
    for &i in &indices {
        let orig = x[i];
        x[i] = orig + epsilon;
        let plus = objective(&x);
        x[i] = orig - epsilon;
        let minus = objective(&x);
        x[i] = orig;
        let numeric = (plus - minus) / (2.0 * epsilon);
        let a = analytic[i];
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        if rel > report.max_rel_error || !rel.is_finite() {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
    }
    Ok(report)
}

/// Central-difference check of the parameter gradient of
/// `loss(network(input))`.
pub fn finite_diff_check<L>(
    params: &NetworkParams,
    input: &SeqBatch,
    loss: L,
    epsilon: f64,
) -> Result<GradCheckReport>
where
    L: Fn(&SeqBatch) -> (f64, SeqBatch),
{
    if !(epsilon > 0.0) {
        return Err(Error::arg(format!("epsilon must be positive, got {epsilon}")));
    }
    let (_, grads) = gradients(params, input, &loss)?;
    let config = *params.config();
    let mut probe = params.clone();
    check_gradient(
        params.as_slice(),
        grads.as_slice(),
        |theta| {
            probe.as_mut_slice().copy_from_slice(theta);
            match probe.forward(input) {
                Ok(out) => loss(&out).0,
                Err(_) => f64::NAN,
            }
        },
        epsilon,
    )
    .map(|r| {
        debug_assert_eq!(grads.config(), &config);
        r
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seqnet::{Head, NetworkConfig};
    use rand::Rng;

    fn squared_error_loss(target: SeqBatch) -> impl Fn(&SeqBatch) -> (f64, SeqBatch) {
        move |out: &SeqBatch| {
            let diff = SeqBatch::from_fn(out.batch(), out.steps(), out.features(), |b, t, f| {
                out.get(b, t, f) - target.get(b, t, f)
            });
            let value = diff.iter().map(|d| d * d).sum::<f64>();
            (value, diff.map(|d| 2.0 * d))
        }
    }

    fn random(b: usize, t: usize, f: usize, rng: &mut ChaCha8Rng) -> SeqBatch {
        SeqBatch::from_fn(b, t, f, |_, _, _| rng.random_range(0.0..1.0))
    }

    #[test]
    fn affine_stub_is_exact() {
        // f(w) = (3w + 1 - 2)^2, f'(w) = 6(3w - 1)
        let w = 0.7;
        let analytic = [6.0 * (3.0 * w - 1.0)];
        let r = check_gradient(&[w], &analytic, |p| (3.0 * p[0] - 1.0).powi(2), 1e-5).unwrap();
        assert!(r.max_rel_error < 1e-9, "{r:?}");
    }

    #[test]
    fn zero_epsilon_is_rejected() {
        assert!(matches!(
            check_gradient(&[0.0], &[0.0], |_| 0.0, 0.0),
            Err(Error::Argument(_))
        ));
        let p = NetworkParams::zeros(NetworkConfig::new(1, 1).with_size(1, 1));
        let x = SeqBatch::zeros(1, 2, 1);
        assert!(finite_diff_check(&p, &x, |o| (0.0, o.map(|_| 0.0)), 0.0).is_err());
    }

    #[test]
    fn small_bilstm_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let c = NetworkConfig::new(1, 1).with_size(4, 1);
        let p = NetworkParams::init(c, 4);
        let x = random(2, 6, 1, &mut rng);
        let target = random(2, 6, 1, &mut rng);
        let r = finite_diff_check(&p, &x, squared_error_loss(target), 1e-5).unwrap();
        assert_eq!(r.coordinates, p.len());
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn deep_unidirectional_and_final_state_match() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let configs = [
            NetworkConfig::new(3, 2).with_size(3, 2).unidirectional(),
            NetworkConfig::new(3, 1).with_size(3, 2).with_head(Head::FinalState),
            NetworkConfig::new(2, 2)
                .with_size(3, 2)
                .with_activation(crate::seqnet::Activation::Identity),
        ];
        for (k, c) in configs.into_iter().enumerate() {
            let p = NetworkParams::init(c, k as u64);
            let x = random(2, 5, c.input_dim, &mut rng);
            let steps = if c.head == Head::FinalState { 1 } else { 5 };
            let target = random(2, steps, c.output_dim, &mut rng);
            let r = finite_diff_check(&p, &x, squared_error_loss(target), 1e-5).unwrap();
            assert!(r.max_rel_error < 1e-4, "config {k}: {r:?}");
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let c = NetworkConfig::new(2, 2).with_size(3, 2);
        let p = NetworkParams::init(c, 6);
        let x = random(2, 4, 2, &mut rng);
        let target = random(2, 4, 2, &mut rng);
        let loss = squared_error_loss(target);
        let (out, tape) = p.forward_with_tape(&x).unwrap();
        let (_, d_out) = loss(&out);
        let mut g = NetworkParams::zeros(c);
        let dx = p.backward(&tape, &d_out, &mut g).unwrap();
        let flat_x: Vec<f64> = x.to_batch_major().iter().copied().collect();
        let flat_dx: Vec<f64> = dx.to_batch_major().iter().copied().collect();
        let r = check_gradient(
            &flat_x,
            &flat_dx,
            |v| {
                let xb = ndarray::Array3::from_shape_vec((2, 4, 2), v.to_vec()).unwrap();
                loss(&p.forward(&SeqBatch::from_batch_major(xb)).unwrap()).0
            },
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }
}
