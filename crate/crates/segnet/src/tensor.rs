use crate::error::{Error, Result};
use crate::real::Real;

/// Dense single-instance activation tensor laid out as `[C, D, H, W]` with
/// `W` fastest. 2D data uses `D = 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    channels: usize,
    spatial: [usize; 3],
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(channels: usize, spatial: [usize; 3]) -> Self {
        let n = channels * spatial.iter().product::<usize>();
        Tensor {
            channels,
            spatial,
            data: vec![T::zero(); n],
        }
    }

    pub fn from_vec(channels: usize, spatial: [usize; 3], data: Vec<T>) -> Result<Self> {
        let want = channels * spatial.iter().product::<usize>();
        if data.len() != want {
            return Err(Error::Shape(format!(
                "{} values for {channels}x{spatial:?} (needs {want})",
                data.len()
            )));
        }
        Ok(Tensor {
            channels,
            spatial,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    /// `[D, H, W]`.
    pub fn spatial(&self) -> [usize; 3] {
        self.spatial
    }

    pub fn voxels(&self) -> usize {
        self.spatial.iter().product()
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

    pub fn channel(&self, c: usize) -> &[T] {
        let n = self.voxels();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.voxels();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels == other.channels && self.spatial == other.spatial
    }

    /// Channel-wise concatenation of two tensors on the same grid.
    pub fn concat(a: &Self, b: &Self) -> Self {
        assert_eq!(a.spatial, b.spatial, "concat: spatial mismatch");
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Tensor {
            channels: a.channels + b.channels,
            spatial: a.spatial,
            data,
        }
    }

    /// Inverse of [`Tensor::concat`]: the first `ca` channels and the rest.
    pub fn split(self, ca: usize) -> (Self, Self) {
        assert!(ca <= self.channels);
        let n = self.voxels();
        let mut data = self.data;
        let rest = data.split_off(ca * n);
        (
            Tensor {
                channels: ca,
                spatial: self.spatial,
                data,
            },
            Tensor {
                channels: self.channels - ca,
                spatial: self.spatial,
                data: rest,
            },
        )
    }

    pub fn add_assign(&mut self, other: &Self) {
        assert!(self.same_shape(other), "add_assign: shape mismatch");
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            channels: self.channels,
            spatial: self.spatial,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            channels: self.channels,
            spatial: self.spatial,
            data: self.data.iter().map(|v| U::lit(v.f64())).collect(),
        }
    }
}
