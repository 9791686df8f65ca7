use super::Real;
use crate::error::{Error, Result};

/// Dense row-major tensor with up to five extents, conventionally
/// `(batch, channel, x, y, z)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.len() > 5 {
            return Err(Error::shape("rank", format!("at most 5 extents, got {}", shape.len())));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::shape("data", format!("shape {shape:?} needs {n} values, got {}", data.len())));
        }
        Ok(Tensor { shape: shape.to_vec(), data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Shape as `(batch, channel, x, y, z)`; errors for other ranks.
    pub fn dims5(&self) -> Result<[usize; 5]> {
        <[usize; 5]>::try_from(self.shape.as_slice())
            .map_err(|_| Error::shape("rank", format!("expected (batch, channel, x, y, z), got {:?}", self.shape)))
    }

    pub fn spatial_len(&self) -> usize {
        self.shape.iter().skip(2).product()
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(Error::shape("reshape", format!("{:?} -> {shape:?}", self.shape)));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| U::lit(v.f64())).collect() }
    }

    pub fn add_assign(&mut self, other: &Tensor<T>) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        self.data.iter_mut().zip(&other.data).for_each(|(a, &b)| *a += b);
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Contiguous slice of channel `c` of batch item `b`.
    pub fn channel(&self, b: usize, c: usize) -> &[T] {
        let s = self.spatial_len();
        let start = (b * self.shape[1] + c) * s;
        &self.data[start..start + s]
    }

    pub fn channel_mut(&mut self, b: usize, c: usize) -> &mut [T] {
        let s = self.spatial_len();
        let start = (b * self.shape[1] + c) * s;
        &mut self.data[start..start + s]
    }

    /// Concatenates along the channel axis.
    pub fn concat_channels(parts: &[&Tensor<T>]) -> Result<Self> {
        let first = parts.first().ok_or(Error::Empty("concat needs at least one tensor"))?;
        let [b, _, x, y, z] = first.dims5()?;
        let mut channels = 0;
        for p in parts {
            let d = p.dims5()?;
            if d[0] != b || d[2..] != [x, y, z] {
                return Err(Error::shape("concat", format!("{:?} vs {:?}", first.shape, p.shape)));
            }
            channels += d[1];
        }
        let s = x * y * z;
        let mut data = Vec::with_capacity(b * channels * s);
        for bi in 0..b {
            for p in parts {
                let c = p.shape[1];
                data.extend_from_slice(&p.data[bi * c * s..(bi + 1) * c * s]);
            }
        }
        Tensor::from_vec(&[b, channels, x, y, z], data)
    }

    /// Splits channels `[0, at)` and `[at, C)`; inverse of a two-way concat.
    pub fn split_channels(&self, at: usize) -> Result<(Self, Self)> {
        let [b, c, x, y, z] = self.dims5()?;
        if at > c {
            return Err(Error::shape("channel", format!("split at {at} of {c}")));
        }
        let s = x * y * z;
        let mut lo = Vec::with_capacity(b * at * s);
        let mut hi = Vec::with_capacity(b * (c - at) * s);
        for bi in 0..b {
            let base = bi * c * s;
            lo.extend_from_slice(&self.data[base..base + at * s]);
            hi.extend_from_slice(&self.data[base + at * s..base + c * s]);
        }
        Ok((Tensor::from_vec(&[b, at, x, y, z], lo)?, Tensor::from_vec(&[b, c - at, x, y, z], hi)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_split_inverse() {
        let a = Tensor::<f32>::from_vec(&[2, 1, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f32>::from_vec(&[2, 2, 1, 1, 2], (10..18).map(|v| v as f32).collect()).unwrap();
        let c = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(c.shape(), &[2, 3, 1, 1, 2]);
        assert_eq!(c.channel(1, 0), &[3.0, 4.0]);
        assert_eq!(c.channel(1, 2), &[16.0, 17.0]);
        let (x, y) = c.split_channels(1).unwrap();
        assert_eq!((x, y), (a, b));
    }

    #[test]
    fn shape_checks() {
        assert!(Tensor::<f64>::from_vec(&[2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f64>::zeros(&[2, 2]).dims5().is_err());
    }
}
