//! Brute-force reference implementations, written independently of the
//! library code: direct loops, alternative algebraic forms, no shared
//! helpers.

#![allow(dead_code)]

use nalgebra::DMatrix;

/// Lag-k autocorrelation from its definition with explicit loops.
pub fn autocorrelation(x: &[f64], k: usize) -> f64 {
    let t = x.len();
    let mut mu = 0.0;
    for v in x {
        mu += v;
    }
    mu /= t as f64;
    let mut var = 0.0;
    for v in x {
        var += (v - mu) * (v - mu);
    }
    var /= t as f64;
    let mut acc = 0.0;
    for i in 0..(t - k) {
        acc += (x[i] - mu) * (x[i + k] - mu) / var;
    }
    acc / (t - k) as f64
}

pub fn rmse_of_means(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let d = a[0].len();
    let mut sum = 0.0;
    for i in 0..d {
        let ma: f64 = a.iter().map(|r| r[i]).sum::<f64>() / a.len() as f64;
        let mb: f64 = b.iter().map(|r| r[i]).sum::<f64>() / b.len() as f64;
        sum += (ma - mb).powi(2);
    }
    (sum / d as f64).sqrt()
}

/// Frequencies by scanning bin boundaries (the last bin includes 1), then
/// smoothed and renormalized.
pub fn histogram(values: &[f64], bins: usize, smoothing: f64) -> Vec<f64> {
    let mut counts = vec![0.0; bins];
    for &v in values {
        let mut placed = false;
        for i in 0..bins {
            let lo = i as f64 / bins as f64;
            let hi = (i + 1) as f64 / bins as f64;
            let last = i == bins - 1;
            if (v >= lo && v < hi) || (last && v >= lo && v <= 1.0) {
                counts[i] += 1.0;
                placed = true;
                break;
            }
        }
        assert!(placed, "value {v} outside [0, 1]");
    }
    let n = values.len() as f64;
    let smoothed: Vec<f64> = counts.iter().map(|c| c / n + smoothing).collect();
    let total: f64 = smoothed.iter().sum();
    smoothed.iter().map(|c| c / total).collect()
}

pub fn kl(p: &[f64], q: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..p.len() {
        if p[i] > 0.0 {
            s += p[i] * (p[i].ln() - q[i].ln());
        }
    }
    s
}

fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|x| x * x.ln()).sum::<f64>()
}

/// Through the entropy identity JS = H(m) - (H(p) + H(q)) / 2.
pub fn js_distance(p: &[f64], q: &[f64]) -> f64 {
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| (a + b) / 2.0).collect();
    (entropy(&m) - 0.5 * (entropy(p) + entropy(q))).max(0.0).sqrt()
}

pub fn mean_cov(rows: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
    let n = rows.len();
    let d = rows[0].len();
    let mut mean = vec![0.0; d];
    for r in rows {
        for j in 0..d {
            mean[j] += r[j] / n as f64;
        }
    }
    let mut cov = DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let mut s = 0.0;
            for r in rows {
                s += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
            cov[(i, j)] = s / (n - 1) as f64;
        }
    }
    (mean, cov)
}

/// Square root of a matrix with positive real spectrum by Denman-Beavers
/// iteration.
pub fn sqrtm_denman_beavers(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut y = a.clone();
    let mut z = DMatrix::<f64>::identity(n, n);
    for _ in 0..100 {
        let yi = y.clone().try_inverse().expect("invertible iterate");
        let zi = z.clone().try_inverse().expect("invertible iterate");
        let y_next = (&y + &zi) * 0.5;
        let z_next = (&z + &yi) * 0.5;
        let delta = (&y_next - &y).norm();
        y = y_next;
        z = z_next;
        if delta < 1e-15 * y.norm() {
            break;
        }
    }
    y
}

/// Squared Fréchet distance with the literal cross term sqrt(Σa Σb).
pub fn frechet(mu_a: &[f64], cov_a: &DMatrix<f64>, mu_b: &[f64], cov_b: &DMatrix<f64>) -> f64 {
    let mut mean_term = 0.0;
    for i in 0..mu_a.len() {
        mean_term += (mu_a[i] - mu_b[i]).powi(2);
    }
    let cross = sqrtm_denman_beavers(&(cov_a * cov_b));
    mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross.trace()
}

/// Index and distance of the closest candidate, first index on ties.
pub fn nearest(target: &[f64], candidates: &[Vec<f64>]) -> (usize, f64) {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (i, c) in candidates.iter().enumerate() {
        let mut s = 0.0;
        for j in 0..target.len() {
            s += (target[j] - c[j]) * (target[j] - c[j]);
        }
        let d = s.sqrt();
        if d < best_d {
            best = i;
            best_d = d;
        }
    }
    (best, best_d)
}
