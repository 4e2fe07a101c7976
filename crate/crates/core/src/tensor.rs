use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Dense row-major tensor with an explicit shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    data: Vec<S>,
}

impl<S: Scalar> Tensor<S> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self {
            shape: shape.to_vec(),
            data: vec![S::zero(); shape.iter().product()],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<S>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "tensor of shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }
}

/// Batch of feature maps stored channel-major: element `(c, n, t)` lives at
/// `(c * n_batch + n) * len + t`.
///
/// With this layout each channel's values across the whole batch are one
/// contiguous row, so pointwise convolutions are a single matrix product and
/// batch statistics are row reductions.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBatch<S> {
    channels: usize,
    batch: usize,
    len: usize,
    data: Vec<S>,
}

impl<S: Scalar> FeatureBatch<S> {
    pub fn zeros(channels: usize, batch: usize, len: usize) -> Self {
        Self {
            channels,
            batch,
            len,
            data: vec![S::zero(); channels * batch * len],
        }
    }

    pub fn from_vec(channels: usize, batch: usize, len: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != channels * batch * len {
            return Err(Error::Shape(format!(
                "feature batch {channels}x{batch}x{len} needs {} values, got {}",
                channels * batch * len,
                data.len()
            )));
        }
        Ok(Self {
            channels,
            batch,
            len,
            data,
        })
    }

    /// Stacks per-sample `C×T` row-major signals into one batch.
    pub fn from_samples<'a, I>(channels: usize, len: usize, samples: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [S]>,
    {
        let samples: Vec<&[S]> = samples.into_iter().collect();
        let batch = samples.len();
        let mut out = Self::zeros(channels, batch, len);
        for (n, s) in samples.iter().enumerate() {
            if s.len() != channels * len {
                return Err(Error::Shape(format!(
                    "sample {n} has {} values, expected {channels}x{len}",
                    s.len()
                )));
            }
            for c in 0..channels {
                out.row_mut(c, n)
                    .copy_from_slice(&s[c * len..(c + 1) * len]);
            }
        }
        Ok(out)
    }

    /// Extracts sample `n` as a `C×T` row-major signal.
    pub fn sample(&self, n: usize) -> Vec<S> {
        let mut out = Vec::with_capacity(self.channels * self.len);
        for c in 0..self.channels {
            out.extend_from_slice(self.row(c, n));
        }
        out
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(channels, len)` of each sample.
    pub fn dims(&self) -> (usize, usize) {
        (self.channels, self.len)
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    #[inline]
    pub fn index(&self, c: usize, n: usize, t: usize) -> usize {
        (c * self.batch + n) * self.len + t
    }

    #[inline]
    pub fn get(&self, c: usize, n: usize, t: usize) -> S {
        self.data[self.index(c, n, t)]
    }

    pub fn row(&self, c: usize, n: usize) -> &[S] {
        let start = self.index(c, n, 0);
        &self.data[start..start + self.len]
    }

    pub fn row_mut(&mut self, c: usize, n: usize) -> &mut [S] {
        let start = self.index(c, n, 0);
        &mut self.data[start..start + self.len]
    }

    /// All values of channel `c` across the batch.
    pub fn channel(&self, c: usize) -> &[S] {
        let w = self.batch * self.len;
        &self.data[c * w..(c + 1) * w]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [S] {
        let w = self.batch * self.len;
        &mut self.data[c * w..(c + 1) * w]
    }

    /// Contiguous channel range `[from, to)`.
    pub fn slice_channels(&self, from: usize, to: usize) -> Self {
        let w = self.batch * self.len;
        Self {
            channels: to - from,
            batch: self.batch,
            len: self.len,
            data: self.data[from * w..to * w].to_vec(),
        }
    }

    /// Stacks batches with equal batch size and length along the channel axis.
    pub fn concat_channels(parts: &[Self]) -> Self {
        let batch = parts[0].batch;
        let len = parts[0].len;
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut channels = 0;
        for p in parts {
            assert_eq!(
                (p.batch, p.len),
                (batch, len),
                "concat_channels: mismatched parts"
            );
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        Self {
            channels,
            batch,
            len,
            data,
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(
            self.data.len(),
            other.data.len(),
            "add_assign: shape mismatch"
        );
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += *b;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map<T: Scalar>(&self, f: impl Fn(S) -> T) -> FeatureBatch<T> {
        FeatureBatch {
            channels: self.channels,
            batch: self.batch,
            len: self.len,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn samples_round_trip_through_channel_major_layout() {
        let a: Vec<f64> = (0..6).map(f64::from).collect();
        let b: Vec<f64> = (10..16).map(f64::from).collect();
        let fb = FeatureBatch::from_samples(2, 3, [a.as_slice(), b.as_slice()]).unwrap();
        assert_eq!(fb.get(1, 0, 2), 5.0);
        assert_eq!(fb.get(0, 1, 1), 11.0);
        assert_eq!(fb.channel(0), &[0.0, 1.0, 2.0, 10.0, 11.0, 12.0]);
        assert_eq!(fb.sample(1), b);
    }

    #[test]
    fn rejects_wrong_length() {
        assert!(Tensor::<f32>::from_vec(&[2, 3], vec![0.0; 5]).is_err());
        assert!(FeatureBatch::<f32>::from_vec(2, 2, 2, vec![0.0; 7]).is_err());
    }
}
