use crate::error::{NetError, Result};
use crate::scalar::Scalar;

/// Dense `(batch, height, width, channels)` tensor, channel-last.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: [usize; 4], data: Vec<T>) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(NetError::ShapeMismatch(format!(
                "tensor {:?} needs {} values, got {}",
                shape,
                expected,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: [usize; 4]) -> Self {
        Self { shape, data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn shape(&self) -> [usize; 4] {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn height(&self) -> usize {
        self.shape[1]
    }

    pub fn width(&self) -> usize {
        self.shape[2]
    }

    pub fn channels(&self) -> usize {
        self.shape[3]
    }

    /// Number of pixels per channel, `batch * height * width`.
    pub fn pixels(&self) -> usize {
        self.shape[0] * self.shape[1] * self.shape[2]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self { shape: self.shape, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape, data: self.data.iter().map(|v| U::lit(v.as_f64())).collect() }
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert_eq!(self.shape, other.shape, "tensor add shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
    }

    /// Batch entries `start..end`.
    pub fn slice_batch(&self, start: usize, end: usize) -> Self {
        let per = self.shape[1] * self.shape[2] * self.shape[3];
        Self {
            shape: [end - start, self.shape[1], self.shape[2], self.shape[3]],
            data: self.data[start * per..end * per].to_vec(),
        }
    }

    /// Stacks tensors along the batch axis.
    pub fn stack_batch(parts: &[Self]) -> Result<Self> {
        let first = parts.first().ok_or_else(|| NetError::ShapeMismatch("nothing to stack".into()))?;
        let inner = &first.shape[1..];
        let mut data = Vec::with_capacity(parts.iter().map(Tensor::len).sum());
        let mut n = 0;
        for p in parts {
            if &p.shape[1..] != inner {
                return Err(NetError::ShapeMismatch(format!(
                    "cannot stack {:?} with {:?}",
                    p.shape, first.shape
                )));
            }
            n += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        Ok(Self { shape: [n, inner[0], inner[1], inner[2]], data })
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(a: &Self, b: &Self) -> Result<Self> {
        if a.shape[..3] != b.shape[..3] {
            return Err(NetError::ShapeMismatch(format!(
                "channel concat of {:?} and {:?}",
                a.shape, b.shape
            )));
        }
        let (ca, cb) = (a.shape[3], b.shape[3]);
        let mut data = Vec::with_capacity(a.len() + b.len());
        for (pa, pb) in a.data.chunks_exact(ca.max(1)).zip(b.data.chunks_exact(cb.max(1))) {
            if ca > 0 {
                data.extend_from_slice(pa);
            }
            if cb > 0 {
                data.extend_from_slice(pb);
            }
        }
        Ok(Self { shape: [a.shape[0], a.shape[1], a.shape[2], ca + cb], data })
    }

    /// Splits off the first `first` channels.
    pub fn split_channels(&self, first: usize) -> (Self, Self) {
        let c = self.shape[3];
        assert!(first <= c, "split beyond channel count");
        let n = self.pixels();
        let mut a = Vec::with_capacity(n * first);
        let mut b = Vec::with_capacity(n * (c - first));
        for px in self.data.chunks_exact(c) {
            a.extend_from_slice(&px[..first]);
            b.extend_from_slice(&px[first..]);
        }
        let [s0, s1, s2, _] = self.shape;
        (Self { shape: [s0, s1, s2, first], data: a }, Self { shape: [s0, s1, s2, c - first], data: b })
    }
}
