use ndarray::{s, Array2, Array3, Axis};

use crate::error::{Error, Result};

/// A batch of equal-length sequences, `[batch, steps, features]`.
///
/// Stored time-major so each step is one contiguous `[batch, features]`
/// matrix for the recurrent matrix products.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqBatch {
    data: Array3<f64>,
}

impl SeqBatch {
    pub fn zeros(batch: usize, steps: usize, features: usize) -> Self {
        SeqBatch {
            data: Array3::zeros((steps, batch, features)),
        }
    }

    pub fn from_fn(
        batch: usize,
        steps: usize,
        features: usize,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Self {
        SeqBatch {
            data: Array3::from_shape_fn((steps, batch, features), |(t, b, k)| f(b, t, k)),
        }
    }

    /// Builds from a `[batch, steps, features]` array.
    pub fn from_batch_major(a: Array3<f64>) -> Self {
        let data = a.permuted_axes([1, 0, 2]).as_standard_layout().into_owned();
        SeqBatch { data }
    }

    pub fn to_batch_major(&self) -> Array3<f64> {
        self.data
            .view()
            .permuted_axes([1, 0, 2])
            .as_standard_layout()
            .into_owned()
    }

    /// Stacks batches with equal steps and features.
    pub fn concat_batches(parts: &[SeqBatch]) -> Result<SeqBatch> {
        if parts.is_empty() {
            return Err(Error::arg("nothing to concatenate"));
        }
        let views: Vec<_> = parts.iter().map(|p| p.data.view()).collect();
        let data = ndarray::concatenate(Axis(1), &views)
            .map_err(|e| Error::shape(format!("cannot concatenate batches: {e}")))?;
        Ok(SeqBatch::from_time_major(data))
    }

    pub(crate) fn from_time_major(data: Array3<f64>) -> Self {
        let data = if data.is_standard_layout() {
            data
        } else {
            data.as_standard_layout().into_owned()
        };
        SeqBatch { data }
    }

    pub(crate) fn time_major(&self) -> &Array3<f64> {
        &self.data
    }

    pub(crate) fn time_major_mut(&mut self) -> &mut Array3<f64> {
        &mut self.data
    }

    pub fn batch(&self) -> usize {
        self.data.dim().1
    }

    pub fn steps(&self) -> usize {
        self.data.dim().0
    }

    pub fn features(&self) -> usize {
        self.data.dim().2
    }

    /// `(batch, steps, features)`
    pub fn dims(&self) -> (usize, usize, usize) {
        let (t, b, f) = self.data.dim();
        (b, t, f)
    }

    pub fn get(&self, b: usize, t: usize, f: usize) -> f64 {
        self.data[[t, b, f]]
    }

    pub fn set(&mut self, b: usize, t: usize, f: usize, v: f64) {
        self.data[[t, b, f]] = v;
    }

    /// One sequence as a `[steps, features]` matrix.
    pub fn sequence(&self, b: usize) -> Array2<f64> {
        self.data.index_axis(Axis(1), b).to_owned()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.data.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> SeqBatch {
        SeqBatch::from_time_major(self.data.mapv(f))
    }

    /// Sub-batch with the given sequence indices, in that order.
    pub fn select(&self, rows: &[usize]) -> SeqBatch {
        SeqBatch::from_time_major(self.data.select(Axis(1), rows))
    }

    /// Steps `range` of every sequence.
    pub fn steps_range(&self, start: usize, end: usize) -> SeqBatch {
        SeqBatch::from_time_major(self.data.slice(s![start..end, .., ..]).to_owned())
    }

    /// Sequence-wise reversal of the time axis.
    pub fn reversed(&self) -> SeqBatch {
        SeqBatch::from_time_major(self.data.slice(s![..;-1, .., ..]).to_owned())
    }
}
