//! Evaluation of generated load profiles against real ones: distribution
//! distances, summary statistics, autocorrelation of matched pairs, CDF and
//! PCA exports.

use std::io::Write;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::{LoadProfile, ProfileSet};
use crate::STEPS;

pub const DEFAULT_BINS: usize = 50;
pub const SMOOTHING: f64 = 1e-10;
pub const CDF_GRID: usize = 101;
pub const CLUSTERS: usize = 4;
pub const KMEANS_MAX_ITER: usize = 300;
pub const KMEANS_TOLERANCE: f64 = 1e-6;
pub const KMEANS_RESTARTS: usize = 10;

fn require_nonempty(set: &ProfileSet, what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::arg(format!("{what} profile set is empty")));
    }
    Ok(())
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

// ---------------------------------------------------------------------------
// Sequence level

/// Lag-`k` autocorrelation normalized by the population variance, so lag 0
/// is exactly one.
pub fn autocorrelation(values: &[f64], k: usize) -> Result<f64> {
    let t = values.len();
    if k >= t {
        return Err(Error::arg(format!("lag {k} out of range for length {t}")));
    }
    let n = t as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    if !(var > 0.0) || values.iter().all(|&v| v == values[0]) {
        return Err(Error::DegenerateProfile);
    }
    if k == 0 {
        return Ok(1.0);
    }
    let s: f64 = values[..t - k]
        .iter()
        .zip(&values[k..])
        .map(|(a, b)| (a - mean) * (b - mean))
        .sum();
    Ok(s / (t - k) as f64 / var)
}

/// Autocorrelation at every lag `0..len`, or `None` for a constant profile.
pub fn autocorrelation_table(values: &[f64]) -> Option<Vec<f64>> {
    (0..values.len())
        .map(|k| autocorrelation(values, k).ok())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NearestPair {
    pub real_index: usize,
    pub gen_index: usize,
    pub distance: f64,
}

/// For each real profile, the generated profile at the smallest Euclidean
/// distance. Ties go to the lower generated index.
pub fn nearest_pairs(real: &[LoadProfile], gen: &ProfileSet) -> Result<Vec<NearestPair>> {
    require_nonempty(gen, "generated")?;
    Ok(real
        .iter()
        .enumerate()
        .map(|(ri, r)| {
            let (gi, d2) = gen
                .iter()
                .map(|g| sq_dist(&r.values, &g.values))
                .enumerate()
                .fold((0, f64::INFINITY), |best, (i, d)| if d < best.1 { (i, d) } else { best });
            NearestPair {
                real_index: ri,
                gen_index: gi,
                distance: d2.sqrt(),
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// Aggregated level

pub fn mean_profile(set: &ProfileSet) -> Result<[f64; STEPS]> {
    require_nonempty(set, "input")?;
    let mut m = [0.0; STEPS];
    for p in set.iter() {
        for (a, v) in m.iter_mut().zip(&p.values) {
            *a += v;
        }
    }
    let n = set.len() as f64;
    m.iter_mut().for_each(|a| *a /= n);
    Ok(m)
}

/// Root mean square difference between the two mean profiles.
pub fn rmse_mean_profiles(a: &ProfileSet, b: &ProfileSet) -> Result<f64> {
    let (ma, mb) = (mean_profile(a)?, mean_profile(b)?);
    Ok((sq_dist(&ma, &mb) / STEPS as f64).sqrt())
}

/// Discrete distribution over uniform bins on `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub probs: Vec<f64>,
}

fn uniform_edges(bins: usize) -> Vec<f64> {
    (0..=bins).map(|i| i as f64 / bins as f64).collect()
}

impl Histogram {
    /// Wraps given probabilities over uniform bins, unsmoothed.
    pub fn from_probs(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::arg("a histogram needs at least 2 bins"));
        }
        if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::arg("probabilities must be finite and non-negative"));
        }
        Ok(Histogram {
            edges: uniform_edges(probs.len()),
            probs,
        })
    }

    /// Smoothed bin frequencies of `values` in `bins` uniform bins.
    /// Values outside `[0, 1]` are clipped into the end bins.
    pub fn of_values(values: &[f64], bins: usize) -> Result<Self> {
        if bins < 2 {
            return Err(Error::arg(format!("need at least 2 bins, got {bins}")));
        }
        if values.is_empty() {
            return Err(Error::arg("no values to count"));
        }
        let mut counts = vec![0.0; bins];
        for &v in values {
            if !v.is_finite() {
                return Err(Error::numeric("histogram input"));
            }
            let idx = ((v * bins as f64).floor().max(0.0) as usize).min(bins - 1);
            counts[idx] += 1.0;
        }
        // Smoothing is added to frequencies, not raw counts, so empty bins
        // stay at SMOOTHING / (1 + bins * SMOOTHING) whatever the sample size.
        let n = values.len() as f64;
        let total = 1.0 + SMOOTHING * bins as f64;
        let probs = counts.iter().map(|c| (c / n + SMOOTHING) / total).collect();
        Ok(Histogram {
            edges: uniform_edges(bins),
            probs,
        })
    }

    pub fn bins(&self) -> usize {
        self.probs.len()
    }

    fn check_compatible(&self, other: &Histogram) -> Result<()> {
        if self.edges != other.edges {
            return Err(Error::arg("histograms have different bin edges"));
        }
        Ok(())
    }
}

pub fn histogram(set: &ProfileSet, bins: usize) -> Result<Histogram> {
    require_nonempty(set, "input")?;
    Histogram::of_values(&set.pooled(), bins)
}

fn kl_terms(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi / qi).ln() } else { 0.0 })
        .sum()
}

/// `sum p ln(p / q)` in nats. Infinite if `q` misses mass that `p` has.
pub fn kl_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    p.check_compatible(q)?;
    Ok(kl_terms(&p.probs, &q.probs).max(0.0))
}

/// Square root of the Jensen-Shannon divergence in nats; at most `sqrt(ln 2)`.
pub fn js_distance(p: &Histogram, q: &Histogram) -> Result<f64> {
    p.check_compatible(q)?;
    let m: Vec<f64> = p.probs.iter().zip(&q.probs).map(|(a, b)| 0.5 * (a + b)).collect();
    let div = 0.5 * kl_terms(&p.probs, &m) + 0.5 * kl_terms(&q.probs, &m);
    Ok(div.max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub qrt1: f64,
    pub qrt2: f64,
    pub qrt3: f64,
}

/// Quantile of sorted data, interpolating linearly between order statistics.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

pub fn stats_of_values(values: &[f64]) -> Result<StatsSummary> {
    if values.is_empty() {
        return Err(Error::arg("no values to summarize"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mean = sorted.iter().sum::<f64>() / n;
    let var = sorted.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    Ok(StatsSummary {
        mean,
        std: var.sqrt(),
        min: sorted[0],
        max: sorted[sorted.len() - 1],
        qrt1: quantile_sorted(&sorted, 0.25),
        qrt2: quantile_sorted(&sorted, 0.5),
        qrt3: quantile_sorted(&sorted, 0.75),
    })
}

/// Statistics over every value of every profile.
pub fn stats_summary(set: &ProfileSet) -> Result<StatsSummary> {
    require_nonempty(set, "input")?;
    stats_of_values(&set.pooled())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdfPoint {
    pub value: f64,
    pub cdf: f64,
}

/// Empirical CDF of the pooled values at `grid` uniform points on `[0, 1]`.
pub fn cdf_points(set: &ProfileSet, grid: usize) -> Result<Vec<CdfPoint>> {
    require_nonempty(set, "input")?;
    if grid < 2 {
        return Err(Error::arg(format!("need at least 2 grid points, got {grid}")));
    }
    let mut pooled = set.pooled();
    pooled.sort_by(f64::total_cmp);
    let n = pooled.len() as f64;
    Ok((0..grid)
        .map(|i| {
            let value = i as f64 / (grid - 1) as f64;
            let below = pooled.partition_point(|&x| x <= value);
            CdfPoint {
                value,
                cdf: below as f64 / n,
            }
        })
        .collect())
}

// ---------------------------------------------------------------------------
// PCA and clustering

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaProjection {
    pub real: Vec<Vec<f64>>,
    pub gen: Vec<Vec<f64>>,
    /// Share of total variance per kept component, non-increasing.
    pub explained: Vec<f64>,
}

/// Projects both sets onto the leading principal directions of their
/// combined, centered point cloud.
pub fn pca_project(real: &ProfileSet, gen: &ProfileSet, dims: usize) -> Result<PcaProjection> {
    let n = real.len() + gen.len();
    if dims == 0 || dims > STEPS {
        return Err(Error::arg(format!("cannot keep {dims} of {STEPS} components")));
    }
    if n < dims + 1 {
        return Err(Error::arg(format!("need at least {} points, got {n}", dims + 1)));
    }
    let rows: Vec<&[f64; STEPS]> = real.vectors().chain(gen.vectors()).collect();
    let mut mean = [0.0; STEPS];
    for r in &rows {
        for (m, v) in mean.iter_mut().zip(r.iter()) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let centered = DMatrix::from_fn(n, STEPS, |i, j| rows[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n - 1) as f64;
    let eig = SymmetricEigen::new(cov);

    let mut order: Vec<usize> = (0..STEPS).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|l| l.max(0.0)).sum();
    let mut basis = DMatrix::zeros(STEPS, dims);
    let mut explained = Vec::with_capacity(dims);
    for (c, &k) in order.iter().take(dims).enumerate() {
        let mut v = eig.eigenvectors.column(k).into_owned();
        // Fix the sign so the largest-magnitude loading is positive.
        let pivot = v.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            v.neg_mut();
        }
        basis.set_column(c, &v);
        explained.push(if total > 0.0 { eig.eigenvalues[k].max(0.0) / total } else { 0.0 });
    }
    let coords = centered * basis;
    let row = |i: usize| coords.row(i).iter().copied().collect::<Vec<f64>>();
    Ok(PcaProjection {
        real: (0..real.len()).map(row).collect(),
        gen: (real.len()..n).map(row).collect(),
        explained,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub assignments: Vec<usize>,
    pub centers: Vec<[f64; STEPS]>,
    pub iterations: usize,
    /// Within-cluster sum of squares after each assignment step.
    pub objective: Vec<f64>,
}

fn nearest_center(p: &[f64], centers: &[[f64; STEPS]]) -> (usize, f64) {
    centers
        .iter()
        .enumerate()
        .map(|(c, ctr)| (c, sq_dist(p, ctr)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

/// D²-weighted seeding: a uniform first center, then each next center drawn
/// with probability proportional to its squared distance from the nearest
/// chosen one.
fn seed_centers(points: &[&[f64; STEPS]], k: usize, rng: &mut ChaCha8Rng) -> Vec<[f64; STEPS]> {
    let mut centers = vec![*points[rng.random_range(0..points.len())]];
    let mut closest: Vec<f64> = points.iter().map(|p| sq_dist(*p, &centers[0])).collect();
    while centers.len() < k {
        // All remaining mass at zero means duplicates only; any point will do.
        let next = match WeightedIndex::new(&closest) {
            Ok(dist) => dist.sample(rng),
            Err(_) => rng.random_range(0..points.len()),
        };
        centers.push(*points[next]);
        for (c, p) in closest.iter_mut().zip(points) {
            *c = c.min(sq_dist(*p, &centers[centers.len() - 1]));
        }
    }
    centers
}

fn lloyd(points: &[&[f64; STEPS]], mut centers: Vec<[f64; STEPS]>) -> KMeans {
    let k = centers.len();
    let mut assignments = vec![0; points.len()];
    let mut objective = Vec::new();
    let mut iterations = 0;
    while iterations < KMEANS_MAX_ITER {
        iterations += 1;
        let mut wcss = 0.0;
        for (a, p) in assignments.iter_mut().zip(points) {
            let (c, d) = nearest_center(*p, &centers);
            *a = c;
            wcss += d;
        }
        objective.push(wcss);

        let mut sums = vec![[0.0; STEPS]; k];
        let mut counts = vec![0usize; k];
        for (&a, p) in assignments.iter().zip(points) {
            counts[a] += 1;
            for (s, v) in sums[a].iter_mut().zip(p.iter()) {
                *s += v;
            }
        }
        let mut shift = 0.0_f64;
        for c in 0..k {
            // An empty cluster keeps its previous center.
            if counts[c] == 0 {
                continue;
            }
            let mut next = sums[c];
            next.iter_mut().for_each(|s| *s /= counts[c] as f64);
            shift = shift.max(sq_dist(&next, &centers[c]).sqrt());
            centers[c] = next;
        }
        if shift < KMEANS_TOLERANCE {
            break;
        }
    }
    for (a, p) in assignments.iter_mut().zip(points) {
        *a = nearest_center(*p, &centers).0;
    }
    KMeans {
        assignments,
        centers,
        iterations,
        objective,
    }
}

/// Lloyd's algorithm from [`KMEANS_RESTARTS`] D²-seeded starts drawn from
/// one seeded stream; the run with the lowest final objective wins, the
/// earliest on ties.
///
/// Plain farthest-point seeding is not used: on min-max normalized data the
/// noisiest days are the farthest points, and it spends centers on them.
pub fn kmeans(set: &ProfileSet, k: usize, seed: u64) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::arg("need at least one cluster"));
    }
    if set.len() < k {
        return Err(Error::arg(format!("{} profiles cannot form {k} clusters", set.len())));
    }
    let points: Vec<&[f64; STEPS]> = set.vectors().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..KMEANS_RESTARTS {
        let run = lloyd(&points, seed_centers(&points, k, &mut rng));
        let score = |r: &KMeans| *r.objective.last().expect("at least one iteration");
        if best.as_ref().is_none_or(|b| score(&run) < score(b)) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

// ---------------------------------------------------------------------------
// Full report

/// A real profile drawn from one cluster, its nearest generated profile, and
/// their autocorrelation at each lag (`None` for a constant profile).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub pair_id: usize,
    pub cluster: usize,
    pub real_index: usize,
    pub gen_index: usize,
    pub distance: f64,
    pub real: Vec<f64>,
    pub generated: Vec<f64>,
    pub acf_real: Option<Vec<f64>>,
    pub acf_gen: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_real: usize,
    pub n_gen: usize,
    pub js_distance: f64,
    pub rmse: f64,
    /// KL(real || generated).
    pub kl_forward: f64,
    /// KL(generated || real).
    pub kl_reverse: f64,
    pub stats_real: StatsSummary,
    pub stats_gen: StatsSummary,
    pub pairs: Vec<PairEntry>,
    pub cdf_real: Vec<CdfPoint>,
    pub cdf_gen: Vec<CdfPoint>,
    pub pca: Option<PcaProjection>,
}

impl MetricsReport {
    pub fn is_finite(&self) -> bool {
        let stats_ok = |s: &StatsSummary| {
            [s.mean, s.std, s.min, s.max, s.qrt1, s.qrt2, s.qrt3]
                .iter()
                .all(|v| v.is_finite())
        };
        let pair_ok = |p: &PairEntry| {
            p.distance.is_finite()
                && p.acf_real.iter().chain(&p.acf_gen).flatten().all(|v| v.is_finite())
        };
        [self.js_distance, self.rmse, self.kl_forward, self.kl_reverse]
            .iter()
            .all(|v| v.is_finite())
            && stats_ok(&self.stats_real)
            && stats_ok(&self.stats_gen)
            && self.pairs.iter().all(pair_ok)
            && self
                .cdf_real
                .iter()
                .chain(&self.cdf_gen)
                .all(|c| c.cdf.is_finite())
            && self.pca.as_ref().is_none_or(|p| {
                p.real
                    .iter()
                    .chain(&p.gen)
                    .flatten()
                    .chain(&p.explained)
                    .all(|v| v.is_finite())
            })
    }
}

/// Distances, statistics, cluster-sampled nearest pairs, CDFs and PCA
/// coordinates for a real and a generated set.
pub fn full_report(real: &ProfileSet, gen: &ProfileSet, seed: u64) -> Result<MetricsReport> {
    require_nonempty(real, "real")?;
    require_nonempty(gen, "generated")?;
    let p = histogram(real, DEFAULT_BINS)?;
    let q = histogram(gen, DEFAULT_BINS)?;

    let k = CLUSTERS.min(real.len());
    let clusters = kmeans(real, k, seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7061_6972);
    let mut picks = Vec::new();
    for c in 0..k {
        let members: Vec<usize> = (0..real.len()).filter(|&i| clusters.assignments[i] == c).collect();
        if members.is_empty() {
            continue;
        }
        picks.push((c, members[rng.random_range(0..members.len())]));
    }
    let sampled: Vec<LoadProfile> = picks.iter().map(|&(_, i)| real.profiles[i].clone()).collect();
    let matches = nearest_pairs(&sampled, gen)?;
    let pairs = picks
        .iter()
        .zip(&matches)
        .enumerate()
        .map(|(id, (&(cluster, ri), m))| {
            let r = &real.profiles[ri].values;
            let g = &gen.profiles[m.gen_index].values;
            PairEntry {
                pair_id: id,
                cluster,
                real_index: ri,
                gen_index: m.gen_index,
                distance: m.distance,
                real: r.to_vec(),
                generated: g.to_vec(),
                acf_real: autocorrelation_table(r),
                acf_gen: autocorrelation_table(g),
            }
        })
        .collect();

    let pca = if real.len() + gen.len() >= 3 {
        Some(pca_project(real, gen, 2)?)
    } else {
        None
    };

    let report = MetricsReport {
        n_real: real.len(),
        n_gen: gen.len(),
        js_distance: js_distance(&p, &q)?,
        rmse: rmse_mean_profiles(real, gen)?,
        kl_forward: kl_divergence(&p, &q)?,
        kl_reverse: kl_divergence(&q, &p)?,
        stats_real: stats_summary(real)?,
        stats_gen: stats_summary(gen)?,
        pairs,
        cdf_real: cdf_points(real, CDF_GRID)?,
        cdf_gen: cdf_points(gen, CDF_GRID)?,
        pca,
    };
    if !report.is_finite() {
        return Err(Error::numeric("metrics report"));
    }
    Ok(report)
}

// ---------------------------------------------------------------------------
// CSV exports

pub fn write_cdf_csv<W: Write>(points: &[CdfPoint], mut sink: W) -> Result<()> {
    writeln!(sink, "value,cdf")?;
    for p in points {
        writeln!(sink, "{},{}", p.value, p.cdf)?;
    }
    Ok(())
}

pub fn write_pca_csv<W: Write>(pca: &PcaProjection, mut sink: W) -> Result<()> {
    writeln!(sink, "pc1,pc2,provenance")?;
    for (rows, label) in [(&pca.real, "real"), (&pca.gen, "generated")] {
        for r in rows {
            let pc2 = r.get(1).copied().unwrap_or(0.0);
            writeln!(sink, "{},{},{label}", r[0], pc2)?;
        }
    }
    Ok(())
}

pub fn write_pairs_csv<W: Write>(pairs: &[PairEntry], mut sink: W) -> Result<()> {
    let hours: Vec<String> = (0..STEPS).map(|t| format!("h{t:02}")).collect();
    writeln!(sink, "pair_id,kind,{}", hours.join(","))?;
    for p in pairs {
        for (kind, values) in [("real", &p.real), ("generated", &p.generated)] {
            let vals: Vec<String> = values.iter().map(|v| v.to_string()).collect();
            writeln!(sink, "{},{kind},{}", p.pair_id, vals.join(","))?;
        }
    }
    Ok(())
}
