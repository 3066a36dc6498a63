//! Elementwise kernels for the LSTM cell. Written branch-free over slices so
//! the compiler can vectorize them; `exp` is accurate to about one ulp.

const LOG2E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_457_519_531_25e-1;
const LN2_LO: f64 = 1.428_606_820_309_417_3e-6;
/// 1.5 * 2^52: adding it rounds to an integer held in the low mantissa bits.
const SHIFTER: f64 = 6_755_399_441_055_744.0;

#[inline(always)]
pub(crate) fn exp(x: f64) -> f64 {
    let x = x.clamp(-708.0, 708.0);
    let t = x * LOG2E + SHIFTER;
    let n = t - SHIFTER;
    let r = x - n * LN2_HI - n * LN2_LO;
    // Taylor series to degree 13 on |r| <= ln2/2.
    let mut p = 1.0 / 6_227_020_800.0;
    p = p * r + 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    let k = (t.to_bits() as i64).wrapping_sub(SHIFTER.to_bits() as i64);
    let scale = f64::from_bits(((k + 1023) << 52) as u64);
    p * scale
}

#[inline(always)]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

#[inline(always)]
pub(crate) fn tanh(x: f64) -> f64 {
    2.0 / (1.0 + exp(-2.0 * x)) - 1.0
}

/// Applies the gate nonlinearities to a `[batch, 4H]` buffer of
/// pre-activations (bias not yet added): sigmoid on the input, forget and
/// output blocks, tanh on the candidate block.
pub(crate) fn activate_gates(pre: &mut [f64], bias: &[f64], hidden: usize) {
    let h4 = 4 * hidden;
    for row in pre.chunks_exact_mut(h4) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
        let (sig_a, rest) = row.split_at_mut(2 * hidden);
        let (cand, sig_b) = rest.split_at_mut(hidden);
        sig_a.iter_mut().for_each(|v| *v = sigmoid(*v));
        cand.iter_mut().for_each(|v| *v = tanh(*v));
        sig_b.iter_mut().for_each(|v| *v = sigmoid(*v));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_is_accurate_to_a_few_ulp() {
        let mut worst: f64 = 0.0;
        let mut x = -700.0;
        while x < 700.0 {
            let rel = (exp(x) - x.exp()).abs() / x.exp();
            worst = worst.max(rel);
            x += 0.012_345;
        }
        assert!(worst < 1e-15, "worst relative error {worst:e}");
        assert_eq!(exp(0.0), 1.0);
        assert!((exp(-1e4) / (-708f64).exp() - 1.0).abs() < 1e-15);
        assert!(exp(1e4).is_finite());
    }

    #[test]
    fn activations_match_std() {
        for i in -4000..4000 {
            let x = i as f64 * 0.01;
            let s = 1.0 / (1.0 + (-x).exp());
            assert!((sigmoid(x) - s).abs() < 1e-15);
            assert!((tanh(x) - x.tanh()).abs() < 1e-15);
        }
        assert_eq!(tanh(400.0), 1.0);
        assert_eq!(tanh(-400.0), -1.0);
    }
}
