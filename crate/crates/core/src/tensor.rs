//! Dense rank-4 tensors in batch/height/width/channels layout.
//!
//! Channels are innermost, so a pointwise convolution over one pixel is a
//! contiguous dot product. Tensors are immutable once built; every op returns
//! a fresh tensor.

use std::fmt;

use thiserror::Error;

/// Named axis used in shape-mismatch errors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Batch,
    Height,
    Width,
    Channels,
    KernelHeight,
    KernelWidth,
    InChannels,
    OutChannels,
    ChannelMultiplier,
    Bias,
}

impl fmt::Display for Axis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            Axis::Batch => "batch",
            Axis::Height => "height",
            Axis::Width => "width",
            Axis::Channels => "channels",
            Axis::KernelHeight => "kernel height",
            Axis::KernelWidth => "kernel width",
            Axis::InChannels => "input channels",
            Axis::OutChannels => "output channels",
            Axis::ChannelMultiplier => "channel multiplier",
            Axis::Bias => "bias length",
        };
        f.write_str(name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TensorError {
    #[error("{axis} mismatch: expected {expected}, got {actual}")]
    DimMismatch {
        axis: Axis,
        expected: usize,
        actual: usize,
    },
    #[error("data length {actual} does not match shape {shape} ({expected} elements)")]
    DataLength {
        shape: Shape,
        expected: usize,
        actual: usize,
    },
    #[error("shape {0} has a zero-sized dimension")]
    ZeroDim(Shape),
    #[error("empty window: {kernel}x{kernel} window does not fit a {input}-wide input without padding")]
    EmptyWindow { input: usize, kernel: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("cannot pad {from} channels down to {to}")]
    ChannelShrink { from: usize, to: usize },
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Dimensions of a [`Tensor`]: batch, height, width, channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl Shape {
    pub const fn new(batch: usize, height: usize, width: usize, channels: usize) -> Self {
        Self {
            batch,
            height,
            width,
            channels,
        }
    }

    /// Shape of a single image (`batch = 1`).
    pub const fn image(height: usize, width: usize, channels: usize) -> Self {
        Self::new(1, height, width, channels)
    }

    pub const fn numel(&self) -> usize {
        self.batch * self.height * self.width * self.channels
    }

    pub const fn dims(&self) -> [usize; 4] {
        [self.batch, self.height, self.width, self.channels]
    }

    pub fn from_dims(dims: [usize; 4]) -> Self {
        Self::new(dims[0], dims[1], dims[2], dims[3])
    }

    /// Flat offset of element `(n, y, x, c)`.
    #[inline]
    pub const fn offset(&self, n: usize, y: usize, x: usize, c: usize) -> usize {
        ((n * self.height + y) * self.width + x) * self.channels + c
    }

    fn validate(&self) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(TensorError::ZeroDim(*self));
        }
        Ok(())
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}x{}x{}x{}",
            self.batch, self.height, self.width, self.channels
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        shape.validate()?;
        if data.len() != shape.numel() {
            return Err(TensorError::DataLength {
                shape,
                expected: shape.numel(),
                actual: data.len(),
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: Shape, value: f32) -> Result<Self> {
        shape.validate()?;
        Ok(Self {
            shape,
            data: vec![value; shape.numel()],
        })
    }

    /// Builds a tensor by evaluating `f(n, y, x, c)` at every position.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Result<Self> {
        shape.validate()?;
        let mut data = Vec::with_capacity(shape.numel());
        for n in 0..shape.batch {
            for y in 0..shape.height {
                for x in 0..shape.width {
                    for c in 0..shape.channels {
                        data.push(f(n, y, x, c));
                    }
                }
            }
        }
        Ok(Self { shape, data })
    }

    /// Callers guarantee `data.len() == shape.numel()` and non-zero dims.
    pub(crate) fn from_parts(shape: Shape, data: Vec<f32>) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        Self { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn get(&self, n: usize, y: usize, x: usize, c: usize) -> f32 {
        self.data[self.shape.offset(n, y, x, c)]
    }

    /// Returns a copy with `f` applied to every element.
    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor::from_parts(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(self, shape: Shape) -> Result<Tensor> {
        Tensor::new(shape, self.data)
    }

    pub(crate) fn expect_shape(&self, expected: Shape) -> Result<()> {
        let pairs = [
            (Axis::Batch, expected.batch, self.shape.batch),
            (Axis::Height, expected.height, self.shape.height),
            (Axis::Width, expected.width, self.shape.width),
            (Axis::Channels, expected.channels, self.shape.channels),
        ];
        for (axis, expected, actual) in pairs {
            if expected != actual {
                return Err(TensorError::DimMismatch {
                    axis,
                    expected,
                    actual,
                });
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_length_mismatch() {
        let err = Tensor::new(Shape::image(2, 2, 1), vec![0.0; 3]).unwrap_err();
        assert!(matches!(
            err,
            TensorError::DataLength {
                expected: 4,
                actual: 3,
                ..
            }
        ));
    }

    #[test]
    fn rejects_zero_dims() {
        assert!(matches!(
            Tensor::zeros(Shape::image(0, 2, 1)),
            Err(TensorError::ZeroDim(_))
        ));
    }

    #[test]
    fn offsets_are_channels_innermost() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.offset(0, 0, 0, 1), 1);
        assert_eq!(s.offset(0, 0, 1, 0), 5);
        assert_eq!(s.offset(0, 1, 0, 0), 20);
        assert_eq!(s.offset(1, 0, 0, 0), 60);
        assert_eq!(s.offset(1, 2, 3, 4), s.numel() - 1);
    }

    #[test]
    fn from_fn_matches_get() {
        let t = Tensor::from_fn(Shape::new(1, 2, 3, 2), |_, y, x, c| (y * 100 + x * 10 + c) as f32).unwrap();
        assert_eq!(t.get(0, 1, 2, 1), 121.0);
        assert_eq!(t.shape().to_string(), "1x2x3x2");
    }
}
