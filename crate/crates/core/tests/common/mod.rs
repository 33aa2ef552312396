//! Independent reference implementations used as test oracles. Nothing here
//! calls into the crate's kernels.

#![allow(dead_code)]

use blazeface::ops::{ConvKind, ConvParams, Padding};
use blazeface::{Shape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: Shape) -> Tensor {
    let data = (0..shape.numel()).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(-1.0f32..1.0)).collect()
}

fn same_pad(input: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let needed = (out - 1) * stride + k;
    let total = needed.saturating_sub(input);
    (out, total / 2)
}

/// Straight nested loops over batch, output row, output column, output
/// channel, kernel row, kernel column and input channel, accumulating in f64.
pub fn naive_conv2d(input: &Tensor, weights: &Tensor, bias: &[f32], p: &ConvParams) -> Tensor {
    let [nb, ih, iw, ic] = input.shape().dims();
    let (kh, kw) = p.kernel;
    let ((oh, pt), (ow, pl)) = match p.padding {
        Padding::Same => (same_pad(ih, kh, p.stride), same_pad(iw, kw, p.stride)),
        Padding::Valid => (((ih - kh) / p.stride + 1, 0), ((iw - kw) / p.stride + 1, 0)),
    };
    let oc = p.out_channels;
    let w = weights.data();
    let mut out = vec![0.0f32; nb * oh * ow * oc];
    for n in 0..nb {
        for oy in 0..oh {
            for ox in 0..ow {
                for co in 0..oc {
                    let mut acc = bias[co] as f64;
                    for ky in 0..kh {
                        for kx in 0..kw {
                            let iy = (oy * p.stride + ky) as isize - pt as isize;
                            let ix = (ox * p.stride + kx) as isize - pl as isize;
                            if iy < 0 || ix < 0 || iy >= ih as isize || ix >= iw as isize {
                                continue;
                            }
                            let (iy, ix) = (iy as usize, ix as usize);
                            match p.kind {
                                ConvKind::Depthwise => {
                                    let wi = (ky * kw + kx) * ic + co;
                                    acc += input.get(n, iy, ix, co) as f64 * w[wi] as f64;
                                }
                                ConvKind::Full | ConvKind::Pointwise => {
                                    for ci in 0..ic {
                                        let wi = ((ky * kw + kx) * ic + ci) * oc + co;
                                        acc += input.get(n, iy, ix, ci) as f64 * w[wi] as f64;
                                    }
                                }
                            }
                        }
                    }
                    out[((n * oh + oy) * ow + ox) * oc + co] = acc as f32;
                }
            }
        }
    }
    Tensor::new(Shape::new(nb, oh, ow, oc), out).unwrap()
}

/// Pointwise conv as an (pixels x in) * (in x out) matrix product.
pub fn matmul_pointwise(input: &Tensor, weights: &Tensor, bias: &[f32]) -> Tensor {
    let s = input.shape();
    let (rows, inner) = (s.batch * s.height * s.width, s.channels);
    let cols = bias.len();
    let a = input.data();
    let b = weights.data();
    let mut out = vec![0.0f32; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let mut acc = bias[c] as f64;
            for k in 0..inner {
                acc += a[r * inner + k] as f64 * b[k * cols + c] as f64;
            }
            out[r * cols + c] = acc as f32;
        }
    }
    Tensor::new(Shape { channels: cols, ..s }, out).unwrap()
}

pub fn naive_max_pool(input: &Tensor, window: usize, stride: usize) -> Tensor {
    let [nb, ih, iw, c] = input.shape().dims();
    let (oh, pt) = same_pad(ih, window, stride);
    let (ow, pl) = same_pad(iw, window, stride);
    Tensor::from_fn(Shape::new(nb, oh, ow, c), |n, oy, ox, ch| {
        let mut best = f32::NEG_INFINITY;
        for ky in 0..window {
            for kx in 0..window {
                let iy = (oy * stride + ky) as isize - pt as isize;
                let ix = (ox * stride + kx) as isize - pl as isize;
                if iy >= 0 && ix >= 0 && (iy as usize) < ih && (ix as usize) < iw {
                    best = best.max(input.get(n, iy as usize, ix as usize, ch));
                }
            }
        }
        best
    })
    .unwrap()
}

pub fn assert_close(actual: &Tensor, expected: &Tensor, rel: f32, what: &str) {
    assert_eq!(actual.shape(), expected.shape(), "{what}: shape");
    let scale = expected.data().iter().fold(1.0f32, |m, v| m.max(v.abs()));
    for (i, (a, e)) in actual.data().iter().zip(expected.data()).enumerate() {
        assert!(
            (a - e).abs() <= rel * scale.max(e.abs()),
            "{what}: element {i}: {a} vs {e}"
        );
    }
}

pub fn max_rel_error(actual: &Tensor, expected: &Tensor) -> f32 {
    let scale = expected.data().iter().fold(1.0f32, |m, v| m.max(v.abs()));
    actual
        .data()
        .iter()
        .zip(expected.data())
        .map(|(a, e)| (a - e).abs() / scale)
        .fold(0.0, f32::max)
}

/// Single-channel image, zero except one bright pixel at `(x, y)`.
pub fn marker_image(size: usize, x: usize, y: usize) -> Tensor {
    Tensor::from_fn(Shape::new(1, size, size, 1), |_, yy, xx, _| if (xx, yy) == (x, y) { 1.0 } else { 0.0 }).unwrap()
}

/// Position of the brightest pixel in normalized coordinates of its center.
pub fn find_marker(image: &Tensor) -> (f32, f32) {
    let s = image.shape();
    let (i, _) = image
        .data()
        .iter()
        .enumerate()
        .fold((0, f32::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best });
    let pixel = i / s.channels;
    let (y, x) = (pixel / s.width, pixel % s.width);
    ((x as f32 + 0.5) / s.width as f32, (y as f32 + 0.5) / s.height as f32)
}

/// A face of side `size` centered at `(cx, cy)`, eyes `0.4 * size` apart.
pub fn face_detection(cx: f32, cy: f32, size: f32) -> blazeface::Detection {
    let h = size / 2.0;
    let mut keypoints = [[cx, cy + 0.1 * size]; 6];
    keypoints[0] = [cx - 0.2 * size, cy - 0.15 * size];
    keypoints[1] = [cx + 0.2 * size, cy - 0.15 * size];
    keypoints[4] = [cx - 0.45 * size, cy];
    keypoints[5] = [cx + 0.45 * size, cy];
    blazeface::Detection {
        bbox: blazeface::BBox::new(cx - h, cy - h, cx + h, cy + h),
        keypoints,
        score: 0.9,
        anchor: 0,
    }
}
