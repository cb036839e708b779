//! Time-major storage for multichannel signals.
//!
//! Samples are stored contiguously, one after another in time order, so that
//! `sample(t)` is a contiguous slice. The variable-vector layout used by the
//! problem assembly depends on this ordering (time-major, channel-minor).

use crate::error::{Error, Result};

/// A sequence of equally-sized real vectors indexed by time step.
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    data: Vec<f64>,
    width: usize,
}

impl Series {
    pub fn zeros(len: usize, width: usize) -> Self {
        Series {
            data: vec![0.0; len * width],
            width,
        }
    }

    pub fn from_flat(data: Vec<f64>, width: usize) -> Result<Self> {
        if width == 0 || data.len() % width != 0 {
            return Err(Error::Dimension(format!(
                "flat buffer of length {} is not a multiple of width {}",
                data.len(),
                width
            )));
        }
        Ok(Series { data, width })
    }

    /// Build from per-sample rows; all rows must share one width.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let width = rows.first().map(|r| r.len()).unwrap_or(0);
        if width == 0 {
            return Err(Error::Dimension("empty series".into()));
        }
        let mut data = Vec::with_capacity(rows.len() * width);
        for r in rows {
            if r.len() != width {
                return Err(Error::Dimension("ragged rows in series".into()));
            }
            data.extend_from_slice(r);
        }
        Ok(Series { data, width })
    }

    /// Scalar (single-channel) series.
    pub fn from_scalars(values: &[f64]) -> Self {
        Series {
            data: values.to_vec(),
            width: 1,
        }
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.width
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn sample(&self, t: usize) -> &[f64] {
        &self.data[t * self.width..(t + 1) * self.width]
    }

    pub fn sample_mut(&mut self, t: usize) -> &mut [f64] {
        &mut self.data[t * self.width..(t + 1) * self.width]
    }

    pub fn flat(&self) -> &[f64] {
        &self.data
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn push(&mut self, sample: &[f64]) {
        debug_assert_eq!(sample.len(), self.width);
        self.data.extend_from_slice(sample);
    }

    /// First `n` samples as a new series.
    pub fn head(&self, n: usize) -> Series {
        Series {
            data: self.data[..n * self.width].to_vec(),
            width: self.width,
        }
    }

    pub fn iter_samples(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.width)
    }

    /// Per-channel sample mean.
    pub fn channel_means(&self) -> Vec<f64> {
        let n = self.len();
        let mut means = vec![0.0; self.width];
        for s in self.iter_samples() {
            for (m, v) in means.iter_mut().zip(s) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= n as f64;
        }
        means
    }

    /// Per-channel sample standard deviation (population convention).
    pub fn channel_stds(&self) -> Vec<f64> {
        let n = self.len();
        let means = self.channel_means();
        let mut vars = vec![0.0; self.width];
        for s in self.iter_samples() {
            for ((v, x), m) in vars.iter_mut().zip(s).zip(&means) {
                let d = x - m;
                *v += d * d;
            }
        }
        vars.iter().map(|v| (v / n as f64).sqrt()).collect()
    }
}
