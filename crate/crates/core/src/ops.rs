//! Convolution, pooling and elementwise primitives over [`Tensor`].
//!
//! Weight tensors reuse the rank-4 container with kernel-first dims:
//! full `kh x kw x in x out`, depthwise `kh x kw x in x 1`, pointwise
//! `1 x 1 x in x out`. Output rows are computed in parallel, but every
//! element is accumulated in the same order, so results are bit-identical
//! regardless of thread count.

use rayon::prelude::*;

use crate::tensor::{Axis, Result, Shape, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvKind {
    Full,
    Depthwise,
    Pointwise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub kernel: (usize, usize),
    pub stride: usize,
    pub padding: Padding,
    pub kind: ConvKind,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvParams {
    /// Square `k x k` convolution mixing all input channels.
    pub fn full(kernel: usize, stride: usize, in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel: (kernel, kernel),
            stride,
            padding: Padding::Same,
            kind: ConvKind::Full,
            in_channels,
            out_channels,
        }
    }

    /// Per-channel `k x k` convolution with channel multiplier 1.
    pub fn depthwise(kernel: usize, stride: usize, channels: usize) -> Self {
        Self {
            kernel: (kernel, kernel),
            stride,
            padding: Padding::Same,
            kind: ConvKind::Depthwise,
            in_channels: channels,
            out_channels: channels,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kernel: (1, 1),
            stride: 1,
            padding: Padding::Same,
            kind: ConvKind::Pointwise,
            in_channels,
            out_channels,
        }
    }

    pub fn with_padding(mut self, padding: Padding) -> Self {
        self.padding = padding;
        self
    }

    /// Dims the weight tensor must have.
    pub fn weight_shape(&self) -> Shape {
        let (kh, kw) = self.kernel;
        match self.kind {
            ConvKind::Full | ConvKind::Pointwise => {
                Shape::new(kh, kw, self.in_channels, self.out_channels)
            }
            ConvKind::Depthwise => Shape::new(kh, kw, self.in_channels, 1),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if kh == 0 || kw == 0 {
            return Err(TensorError::InvalidParams("kernel size must be >= 1".into()));
        }
        if self.stride == 0 {
            return Err(TensorError::InvalidParams("stride must be >= 1".into()));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(TensorError::InvalidParams("channel counts must be >= 1".into()));
        }
        match self.kind {
            ConvKind::Pointwise if (kh, kw) != (1, 1) => Err(TensorError::InvalidParams(format!(
                "pointwise convolution needs a 1x1 kernel, got {kh}x{kw}"
            ))),
            ConvKind::Depthwise if self.in_channels != self.out_channels => {
                Err(TensorError::DimMismatch {
                    axis: Axis::OutChannels,
                    expected: self.in_channels,
                    actual: self.out_channels,
                })
            }
            _ => Ok(()),
        }
    }
}

/// Output length and leading pad along one spatial axis.
///
/// `Same` pads by `max((out - 1) * stride + k - in, 0)` in total with the
/// smaller half first; `Valid` never pads.
pub fn output_extent(input: usize, kernel: usize, stride: usize, padding: Padding) -> Result<(usize, usize)> {
    if kernel == 0 || stride == 0 {
        return Err(TensorError::InvalidParams("kernel and stride must be >= 1".into()));
    }
    match padding {
        Padding::Same => {
            let out = input.div_ceil(stride);
            let total = ((out - 1) * stride + kernel).saturating_sub(input);
            Ok((out, total / 2))
        }
        Padding::Valid => {
            if input < kernel {
                return Err(TensorError::EmptyWindow { input, kernel });
            }
            Ok(((input - kernel) / stride + 1, 0))
        }
    }
}

pub fn conv2d(input: &Tensor, weights: &Tensor, bias: &[f32], params: &ConvParams) -> Result<Tensor> {
    params.validate()?;
    let s = input.shape();
    if s.channels != params.in_channels {
        return Err(TensorError::DimMismatch {
            axis: Axis::InChannels,
            expected: params.in_channels,
            actual: s.channels,
        });
    }
    let ws = weights.shape();
    let expected_ws = params.weight_shape();
    let axes = [
        Axis::KernelHeight,
        Axis::KernelWidth,
        Axis::InChannels,
        if params.kind == ConvKind::Depthwise {
            Axis::ChannelMultiplier
        } else {
            Axis::OutChannels
        },
    ];
    for ((axis, expected), actual) in axes.into_iter().zip(expected_ws.dims()).zip(ws.dims()) {
        if expected != actual {
            return Err(TensorError::DimMismatch {
                axis,
                expected,
                actual,
            });
        }
    }
    if bias.len() != params.out_channels {
        return Err(TensorError::DimMismatch {
            axis: Axis::Bias,
            expected: params.out_channels,
            actual: bias.len(),
        });
    }

    let (kh, kw) = params.kernel;
    let (out_h, pad_top) = output_extent(s.height, kh, params.stride, params.padding)?;
    let (out_w, pad_left) = output_extent(s.width, kw, params.stride, params.padding)?;
    let out_shape = Shape::new(s.batch, out_h, out_w, params.out_channels);
    let row_len = out_w * params.out_channels;
    let mut out = vec![0.0f32; out_shape.numel()];

    let geometry = Geometry {
        input: s,
        kh,
        kw,
        stride: params.stride,
        pad_top,
        pad_left,
        out_w,
        out_c: params.out_channels,
    };
    let x = input.data();
    let w = weights.data();
    out.par_chunks_mut(row_len).enumerate().for_each(|(row, dst)| {
        let n = row / out_h;
        let oy = row % out_h;
        match params.kind {
            ConvKind::Full | ConvKind::Pointwise => geometry.full_row(x, w, bias, n, oy, dst),
            ConvKind::Depthwise => geometry.depthwise_row(x, w, bias, n, oy, dst),
        }
    });
    Ok(Tensor::from_parts(out_shape, out))
}

struct Geometry {
    input: Shape,
    kh: usize,
    kw: usize,
    stride: usize,
    pad_top: usize,
    pad_left: usize,
    out_w: usize,
    out_c: usize,
}

impl Geometry {
    /// Input coordinate for kernel tap `k` at output position `o`, if inside.
    #[inline]
    fn tap(o: usize, k: usize, stride: usize, pad: usize, extent: usize) -> Option<usize> {
        (o * stride + k).checked_sub(pad).filter(|&i| i < extent)
    }

    fn full_row(&self, x: &[f32], w: &[f32], bias: &[f32], n: usize, oy: usize, dst: &mut [f32]) {
        let in_c = self.input.channels;
        for (ox, acc) in dst.chunks_exact_mut(self.out_c).enumerate() {
            acc.copy_from_slice(bias);
            for ky in 0..self.kh {
                let Some(iy) = Self::tap(oy, ky, self.stride, self.pad_top, self.input.height) else {
                    continue;
                };
                for kx in 0..self.kw {
                    let Some(ix) = Self::tap(ox, kx, self.stride, self.pad_left, self.input.width) else {
                        continue;
                    };
                    let base = self.input.offset(n, iy, ix, 0);
                    let pixel = &x[base..base + in_c];
                    let tap = (ky * self.kw + kx) * in_c;
                    for (ci, &v) in pixel.iter().enumerate() {
                        let wrow = &w[(tap + ci) * self.out_c..(tap + ci + 1) * self.out_c];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += v * wv;
                        }
                    }
                }
            }
        }
    }

    fn depthwise_row(&self, x: &[f32], w: &[f32], bias: &[f32], n: usize, oy: usize, dst: &mut [f32]) {
        let c = self.input.channels;
        for (ox, acc) in dst.chunks_exact_mut(c).enumerate() {
            acc.copy_from_slice(bias);
            for ky in 0..self.kh {
                let Some(iy) = Self::tap(oy, ky, self.stride, self.pad_top, self.input.height) else {
                    continue;
                };
                for kx in 0..self.kw {
                    let Some(ix) = Self::tap(ox, kx, self.stride, self.pad_left, self.input.width) else {
                        continue;
                    };
                    let base = self.input.offset(n, iy, ix, 0);
                    let pixel = &x[base..base + c];
                    let wrow = &w[(ky * self.kw + kx) * c..(ky * self.kw + kx + 1) * c];
                    for ((a, &v), &wv) in acc.iter_mut().zip(pixel).zip(wrow) {
                        *a += v * wv;
                    }
                }
            }
        }
        debug_assert_eq!(dst.len(), self.out_w * c);
    }
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|v| v.max(0.0))
}

/// Per-channel max over `window x window` patches, same-padding geometry.
/// Padded positions never win the max.
pub fn max_pool2d(input: &Tensor, window: usize, stride: usize) -> Result<Tensor> {
    if window == 0 || stride == 0 {
        return Err(TensorError::InvalidParams("pool window and stride must be >= 1".into()));
    }
    let s = input.shape();
    let (out_h, pad_top) = output_extent(s.height, window, stride, Padding::Same)?;
    let (out_w, pad_left) = output_extent(s.width, window, stride, Padding::Same)?;
    let out_shape = Shape::new(s.batch, out_h, out_w, s.channels);
    let mut out = vec![f32::NEG_INFINITY; out_shape.numel()];
    let x = input.data();
    out.par_chunks_mut(out_w * s.channels).enumerate().for_each(|(row, dst)| {
        let n = row / out_h;
        let oy = row % out_h;
        for (ox, acc) in dst.chunks_exact_mut(s.channels).enumerate() {
            for ky in 0..window {
                let Some(iy) = Geometry::tap(oy, ky, stride, pad_top, s.height) else {
                    continue;
                };
                for kx in 0..window {
                    let Some(ix) = Geometry::tap(ox, kx, stride, pad_left, s.width) else {
                        continue;
                    };
                    let base = s.offset(n, iy, ix, 0);
                    for (a, &v) in acc.iter_mut().zip(&x[base..base + s.channels]) {
                        *a = a.max(v);
                    }
                }
            }
        }
    });
    Ok(Tensor::from_parts(out_shape, out))
}

/// Appends zero-filled channels up to `new_channels`.
pub fn pad_channels(input: &Tensor, new_channels: usize) -> Result<Tensor> {
    let s = input.shape();
    if new_channels < s.channels {
        return Err(TensorError::ChannelShrink {
            from: s.channels,
            to: new_channels,
        });
    }
    if new_channels == s.channels {
        return Ok(input.clone());
    }
    let out_shape = Shape {
        channels: new_channels,
        ..s
    };
    let mut out = vec![0.0f32; out_shape.numel()];
    for (dst, src) in out
        .chunks_exact_mut(new_channels)
        .zip(input.data().chunks_exact(s.channels))
    {
        dst[..s.channels].copy_from_slice(src);
    }
    Ok(Tensor::from_parts(out_shape, out))
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    b.expect_shape(a.shape())?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Ok(Tensor::from_parts(a.shape(), data))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: Shape, data: &[f32]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    #[test]
    fn pointwise_is_affine() {
        let x = Tensor::full(Shape::image(3, 3, 1), 1.0).unwrap();
        let w = t(Shape::new(1, 1, 1, 1), &[2.0]);
        let y = conv2d(&x, &w, &[0.5], &ConvParams::pointwise(1, 1)).unwrap();
        assert_eq!(y.shape(), Shape::image(3, 3, 1));
        assert!(y.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn depthwise_identity_kernel() {
        let x = Tensor::from_fn(Shape::image(5, 5, 1), |_, y, x, _| (y * 5 + x) as f32).unwrap();
        let mut k = vec![0.0; 9];
        k[4] = 1.0;
        let w = t(Shape::new(3, 3, 1, 1), &k);
        let y = conv2d(&x, &w, &[0.0], &ConvParams::depthwise(3, 1, 1)).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn same_padding_splits_smaller_half_first() {
        // in 8, k 5, stride 2: out 4, total pad 3, top 1
        assert_eq!(output_extent(8, 5, 2, Padding::Same).unwrap(), (4, 1));
        assert_eq!(output_extent(128, 5, 2, Padding::Same).unwrap(), (64, 1));
        assert_eq!(output_extent(5, 3, 1, Padding::Same).unwrap(), (5, 1));
        assert_eq!(output_extent(4, 2, 2, Padding::Same).unwrap(), (2, 0));
        assert_eq!(output_extent(7, 3, 2, Padding::Valid).unwrap(), (3, 0));
    }

    #[test]
    fn valid_padding_rejects_oversized_kernel() {
        let x = Tensor::zeros(Shape::image(2, 2, 1)).unwrap();
        let w = Tensor::zeros(Shape::new(3, 3, 1, 1)).unwrap();
        let p = ConvParams::depthwise(3, 1, 1).with_padding(Padding::Valid);
        assert!(matches!(
            conv2d(&x, &w, &[0.0], &p),
            Err(TensorError::EmptyWindow { input: 2, kernel: 3 })
        ));
    }

    #[test]
    fn mismatched_weights_name_the_axis() {
        let x = Tensor::zeros(Shape::image(4, 4, 3)).unwrap();
        let w = Tensor::zeros(Shape::new(1, 1, 3, 5)).unwrap();
        let err = conv2d(&x, &w, &[0.0; 4], &ConvParams::pointwise(3, 4)).unwrap_err();
        assert_eq!(
            err,
            TensorError::DimMismatch {
                axis: Axis::OutChannels,
                expected: 4,
                actual: 5
            }
        );
        let w = Tensor::zeros(Shape::new(1, 1, 3, 4)).unwrap();
        let err = conv2d(&x, &w, &[0.0; 3], &ConvParams::pointwise(3, 4)).unwrap_err();
        assert!(matches!(err, TensorError::DimMismatch { axis: Axis::Bias, .. }));
        let err = conv2d(&x, &w, &[0.0; 4], &ConvParams::pointwise(2, 4)).unwrap_err();
        assert!(matches!(err, TensorError::DimMismatch { axis: Axis::InChannels, .. }));
    }

    #[test]
    fn param_invariants() {
        let mut p = ConvParams::pointwise(2, 2);
        p.kernel = (3, 3);
        assert!(p.validate().is_err());
        let mut p = ConvParams::depthwise(3, 1, 2);
        p.out_channels = 4;
        assert!(p.validate().is_err());
        assert!(ConvParams::full(0, 1, 1, 1).validate().is_err());
        assert!(ConvParams::full(3, 0, 1, 1).validate().is_err());
    }

    #[test]
    fn relu_clamps_negatives() {
        let x = t(Shape::image(1, 3, 1), &[-1.0, 0.0, 2.0]);
        assert_eq!(relu(&x).data(), &[0.0, 0.0, 2.0]);
        let neg = Tensor::full(Shape::image(2, 2, 2), -3.0).unwrap();
        assert!(relu(&neg).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn max_pool_basic() {
        let x = t(Shape::image(2, 2, 1), &[1.0, 2.0, 3.0, 4.0]);
        let y = max_pool2d(&x, 2, 2).unwrap();
        assert_eq!(y.shape(), Shape::image(1, 1, 1));
        assert_eq!(y.data(), &[4.0]);
        let c = Tensor::full(Shape::image(5, 5, 2), 7.0).unwrap();
        let y = max_pool2d(&c, 2, 2).unwrap();
        assert_eq!(y.shape(), Shape::image(3, 3, 2));
        assert!(y.data().iter().all(|&v| v == 7.0));
        assert!(max_pool2d(&c, 0, 1).is_err());
    }

    #[test]
    fn pad_channels_appends_zeros() {
        let x = t(Shape::image(1, 1, 2), &[1.0, 2.0]);
        assert_eq!(pad_channels(&x, 4).unwrap().data(), &[1.0, 2.0, 0.0, 0.0]);
        assert_eq!(pad_channels(&x, 2).unwrap(), x);
        assert!(matches!(
            pad_channels(&x, 1),
            Err(TensorError::ChannelShrink { from: 2, to: 1 })
        ));
    }

    #[test]
    fn add_checks_shapes() {
        let a = Tensor::full(Shape::image(2, 2, 1), 1.0).unwrap();
        let z = Tensor::zeros(Shape::image(2, 2, 1)).unwrap();
        assert_eq!(add(&a, &z).unwrap(), a);
        let b = Tensor::zeros(Shape::image(2, 2, 2)).unwrap();
        assert!(matches!(
            add(&a, &b),
            Err(TensorError::DimMismatch { axis: Axis::Channels, .. })
        ));
    }
}
