//! Fréchet distance between Gaussian summaries of profile sets, and
//! minimum-distance checkpoint selection.

use std::io::Write;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::ingest::ProfileSet;

const SYMMETRY_TOLERANCE: f64 = 1e-8;

/// Sample mean and covariance (divisor `n - 1`) of a set of vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianSummary {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
}

impl GaussianSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Summary of arbitrary equal-length rows.
    pub fn from_rows<'a, I>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let rows: Vec<&[f64]> = rows.into_iter().collect();
        if rows.len() < 2 {
            return Err(Error::arg(format!(
                "a covariance needs at least 2 samples, got {}",
                rows.len()
            )));
        }
        let d = rows[0].len();
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::shape("rows differ in length"));
        }
        let n = rows.len() as f64;
        let mut mean = DVector::zeros(d);
        for r in &rows {
            for (m, &x) in mean.iter_mut().zip(r.iter()) {
                *m += x;
            }
        }
        mean /= n;
        let mut cov = DMatrix::zeros(d, d);
        let mut centered = vec![0.0; d];
        for r in &rows {
            for ((c, &x), m) in centered.iter_mut().zip(r.iter()).zip(mean.iter()) {
                *c = x - m;
            }
            for j in 0..d {
                let cj = centered[j];
                for i in j..d {
                    cov[(i, j)] += centered[i] * cj;
                }
            }
        }
        for j in 0..d {
            for i in j..d {
                let v = cov[(i, j)] / (n - 1.0);
                cov[(i, j)] = v;
                cov[(j, i)] = v;
            }
        }
        Ok(GaussianSummary { mean, cov })
    }
}

pub fn summarize(set: &ProfileSet) -> Result<GaussianSummary> {
    GaussianSummary::from_rows(set.vectors().map(|v| v.as_slice()))
}

fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(Error::arg(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
    }
    let scale = m.amax().max(1.0);
    let n = m.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            if (m[(i, j)] - m[(j, i)]).abs() > SYMMETRY_TOLERANCE * scale {
                return Err(Error::arg(format!("matrix is not symmetric at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Principal square root of a symmetric positive semi-definite matrix.
/// Eigenvalues below the numerical-rank tolerance `n * eps * max|λ|` are
/// round-off and taken as zero; without this their square roots (about
/// 1e-8 for a 1e-16 eigenvalue) leak into traces of singular covariances.
pub fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_symmetric(m)?;
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let largest = eig.eigenvalues.amax();
    let floor = m.nrows() as f64 * f64::EPSILON * largest;
    let roots = eig
        .eigenvalues
        .map(|l| if l > floor { l.sqrt() } else { 0.0 });
    let v = &eig.eigenvectors;
    let scaled = v * DMatrix::from_diagonal(&roots);
    let out = &scaled * v.transpose();
    Ok((&out + out.transpose()) * 0.5)
}

/// Squared Fréchet distance between two Gaussians. The cross term is taken
/// as `sqrt(A^½ B A^½)`, which has the same trace as `sqrt(A B)` and stays
/// symmetric.
pub fn frechet_distance(a: &GaussianSummary, b: &GaussianSummary) -> Result<f64> {
    if a.dim() != b.dim() || a.cov.nrows() != b.cov.nrows() {
        return Err(Error::shape(format!(
            "summaries have dimensions {} and {}",
            a.dim(),
            b.dim()
        )));
    }
    let mean_term = (&a.mean - &b.mean).norm_squared();
    let root_a = psd_sqrt(&a.cov)?;
    let inner = &root_a * &b.cov * &root_a;
    let inner = (&inner + inner.transpose()) * 0.5;
    let cross = psd_sqrt(&inner)?;
    let total = mean_term + a.cov.trace() + b.cov.trace() - 2.0 * cross.trace();
    if !total.is_finite() {
        return Err(Error::numeric("frechet distance"));
    }
    Ok(total.max(0.0))
}

/// One scored candidate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Score {
    pub epoch: u64,
    pub frechet: f64,
}

/// Index of the lowest score, ties going to the lower epoch.
pub fn select_best(scores: &[Score]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::arg("no checkpoints to select from"));
    }
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if !s.frechet.is_finite() {
            continue;
        }
        best = match best {
            None => Some(i),
            Some(b) => {
                let cur = &scores[b];
                if s.frechet < cur.frechet || (s.frechet == cur.frechet && s.epoch < cur.epoch) {
                    Some(i)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.ok_or_else(|| Error::numeric("every checkpoint score is non-finite"))
}

/// Scores each `(epoch, generated samples)` candidate against the reference
/// and returns all scores plus the index of the winner.
pub fn score_and_select(
    candidates: &[(u64, &ProfileSet)],
    reference: &ProfileSet,
) -> Result<(Vec<Score>, usize)> {
    if candidates.is_empty() {
        return Err(Error::arg("no checkpoints to select from"));
    }
    let reference = summarize(reference)?;
    let scores = candidates
        .iter()
        .map(|(epoch, set)| {
            Ok(Score {
                epoch: *epoch,
                frechet: frechet_distance(&summarize(set)?, &reference)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = select_best(&scores)?;
    Ok((scores, best))
}

/// Writes `epoch,frechet` rows.
pub fn write_scores<W: Write>(scores: &[Score], mut sink: W) -> Result<()> {
    writeln!(sink, "epoch,frechet")?;
    for s in scores {
        writeln!(sink, "{},{}", s.epoch, s.frechet)?;
    }
    Ok(())
}
