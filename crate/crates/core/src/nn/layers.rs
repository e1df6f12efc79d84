//! Differentiable building blocks for the pose networks: 3x3 convolution,
//! per-position group normalization, SiLU, fully connected layers, and
//! bilinear feature-map lookup.
//!
//! Conventions shared by every backward function here:
//! * parameter gradients (`d_weight`, `d_bias`, ...) are **accumulated** into
//!   the provided buffers, so one gradient vector can collect contributions
//!   from many samples;
//! * input gradients are **overwritten** (returned fresh, or written through
//!   a `&mut` that the function fully defines), since each activation feeds
//!   exactly one consumer inside a feed-forward net.

use crate::scalar::{rl, Real};

/// Channel-major 2D activation grid. `stride` is the number of input pixels
/// per cell along each axis, so cell `(x, y)` is centered at pixel
/// `((x + 0.5) * stride, (y + 0.5) * stride)`.
#[derive(Debug, Clone)]
pub struct FeatureMap<S> {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    /// Layout: `data[(c * height + y) * width + x]`.
    pub data: Vec<S>,
}

impl<S: Real> FeatureMap<S> {
    pub fn zeros(channels: usize, height: usize, width: usize, stride: usize) -> Self {
        Self {
            channels,
            height,
            width,
            stride,
            data: vec![S::zero(); channels * height * width],
        }
    }

    pub fn from_data(
        channels: usize,
        height: usize,
        width: usize,
        stride: usize,
        data: Vec<S>,
    ) -> Self {
        assert_eq!(data.len(), channels * height * width);
        Self {
            channels,
            height,
            width,
            stride,
            data,
        }
    }

    #[inline]
    pub fn idx(&self, c: usize, y: usize, x: usize) -> usize {
        (c * self.height + y) * self.width + x
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> S {
        self.data[self.idx(c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, c: usize, y: usize, x: usize, v: S) {
        let i = self.idx(c, y, x);
        self.data[i] = v;
    }
}

/// 3x3 convolution with zero padding 1 and the given stride.
///
/// `weight` has shape `(c_out, c_in, 3, 3)`, `bias` has shape `(c_out)`.
/// Output spatial size is `(n - 1) / stride + 1` per axis and the output
/// map's pixel stride is `input.stride * stride`.
pub fn conv3x3_forward<S: Real>(
    input: &FeatureMap<S>,
    weight: &[S],
    bias: &[S],
    stride: usize,
) -> FeatureMap<S> {
    let c_in = input.channels;
    let c_out = bias.len();
    debug_assert_eq!(weight.len(), c_out * c_in * 9);
    let h_out = (input.height - 1) / stride + 1;
    let w_out = (input.width - 1) / stride + 1;
    let mut out = FeatureMap::zeros(c_out, h_out, w_out, input.stride * stride);
    for co in 0..c_out {
        for y in 0..h_out {
            for x in 0..w_out {
                let mut acc = bias[co];
                for ci in 0..c_in {
                    let w_base = (co * c_in + ci) * 9;
                    for ky in 0..3usize {
                        let iy = (y * stride + ky) as isize - 1;
                        if iy < 0 || iy >= input.height as isize {
                            continue;
                        }
                        let row = (ci * input.height + iy as usize) * input.width;
                        for kx in 0..3usize {
                            let ix = (x * stride + kx) as isize - 1;
                            if ix < 0 || ix >= input.width as isize {
                                continue;
                            }
                            acc += weight[w_base + ky * 3 + kx] * input.data[row + ix as usize];
                        }
                    }
                }
                out.data[(co * h_out + y) * w_out + x] = acc;
            }
        }
    }
    out
}

/// Backward pass of [`conv3x3_forward`]. Accumulates into `d_weight` /
/// `d_bias` and returns the gradient with respect to the input map.
pub fn conv3x3_backward<S: Real>(
    input: &FeatureMap<S>,
    weight: &[S],
    stride: usize,
    d_out: &FeatureMap<S>,
    d_weight: &mut [S],
    d_bias: &mut [S],
) -> FeatureMap<S> {
    let c_in = input.channels;
    let c_out = d_out.channels;
    debug_assert_eq!(weight.len(), c_out * c_in * 9);
    let mut d_input = FeatureMap::zeros(c_in, input.height, input.width, input.stride);
    for co in 0..c_out {
        for y in 0..d_out.height {
            for x in 0..d_out.width {
                let g = d_out.data[(co * d_out.height + y) * d_out.width + x];
                if g == S::zero() {
                    continue;
                }
                d_bias[co] += g;
                for ci in 0..c_in {
                    let w_base = (co * c_in + ci) * 9;
                    for ky in 0..3usize {
                        let iy = (y * stride + ky) as isize - 1;
                        if iy < 0 || iy >= input.height as isize {
                            continue;
                        }
                        let row = (ci * input.height + iy as usize) * input.width;
                        for kx in 0..3usize {
                            let ix = (x * stride + kx) as isize - 1;
                            if ix < 0 || ix >= input.width as isize {
                                continue;
                            }
                            let ii = row + ix as usize;
                            d_weight[w_base + ky * 3 + kx] += g * input.data[ii];
                            d_input.data[ii] += g * weight[w_base + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
    d_input
}

const GROUP_NORM_EPS: f64 = 1e-5;

/// Group normalization applied independently at every spatial position:
/// each channel group is normalized to zero mean / unit variance using only
/// the `channels / groups` values at that position, then scaled by the
/// per-channel `gamma` and shifted by `beta`. Normalizing per position keeps
/// the operation strictly local, so a cell's output still depends only on
/// pixels inside its receptive field.
pub fn group_norm_forward<S: Real>(
    input: &FeatureMap<S>,
    gamma: &[S],
    beta: &[S],
    groups: usize,
) -> FeatureMap<S> {
    let c = input.channels;
    debug_assert_eq!(c % groups, 0);
    debug_assert_eq!(gamma.len(), c);
    debug_assert_eq!(beta.len(), c);
    let gs = c / groups;
    let inv_m = rl::<S>(1.0 / gs as f64);
    let eps = rl::<S>(GROUP_NORM_EPS);
    let mut out = FeatureMap::zeros(c, input.height, input.width, input.stride);
    for y in 0..input.height {
        for x in 0..input.width {
            for g in 0..groups {
                let c0 = g * gs;
                let mut mean = S::zero();
                for ci in c0..c0 + gs {
                    mean += input.at(ci, y, x);
                }
                mean *= inv_m;
                let mut var = S::zero();
                for ci in c0..c0 + gs {
                    let d = input.at(ci, y, x) - mean;
                    var += d * d;
                }
                var *= inv_m;
                let istd = (var + eps).sqrt().recip();
                for ci in c0..c0 + gs {
                    let xhat = (input.at(ci, y, x) - mean) * istd;
                    out.set(ci, y, x, gamma[ci] * xhat + beta[ci]);
                }
            }
        }
    }
    out
}

/// Backward pass of [`group_norm_forward`]; statistics are recomputed from
/// the saved input rather than stored.
pub fn group_norm_backward<S: Real>(
    input: &FeatureMap<S>,
    gamma: &[S],
    groups: usize,
    d_out: &FeatureMap<S>,
    d_gamma: &mut [S],
    d_beta: &mut [S],
) -> FeatureMap<S> {
    let c = input.channels;
    let gs = c / groups;
    let inv_m = rl::<S>(1.0 / gs as f64);
    let eps = rl::<S>(GROUP_NORM_EPS);
    let mut d_input = FeatureMap::zeros(c, input.height, input.width, input.stride);
    let mut xhat = vec![S::zero(); gs];
    let mut d_xhat = vec![S::zero(); gs];
    for y in 0..input.height {
        for x in 0..input.width {
            for g in 0..groups {
                let c0 = g * gs;
                let mut mean = S::zero();
                for ci in c0..c0 + gs {
                    mean += input.at(ci, y, x);
                }
                mean *= inv_m;
                let mut var = S::zero();
                for ci in c0..c0 + gs {
                    let d = input.at(ci, y, x) - mean;
                    var += d * d;
                }
                var *= inv_m;
                let istd = (var + eps).sqrt().recip();
                let mut s1 = S::zero();
                let mut s2 = S::zero();
                for k in 0..gs {
                    let ci = c0 + k;
                    let go = d_out.at(ci, y, x);
                    xhat[k] = (input.at(ci, y, x) - mean) * istd;
                    d_beta[ci] += go;
                    d_gamma[ci] += go * xhat[k];
                    d_xhat[k] = go * gamma[ci];
                    s1 += d_xhat[k];
                    s2 += d_xhat[k] * xhat[k];
                }
                for k in 0..gs {
                    let dx = istd * (d_xhat[k] - (s1 + xhat[k] * s2) * inv_m);
                    d_input.set(c0 + k, y, x, dx);
                }
            }
        }
    }
    d_input
}

/// SiLU activation x * sigmoid(x).
#[inline]
pub fn silu<S: Real>(x: S) -> S {
    x * x.sigmoid()
}

/// Derivative of SiLU: sigmoid(x) * (1 + x * (1 - sigmoid(x))).
#[inline]
pub fn silu_grad<S: Real>(x: S) -> S {
    let s = x.sigmoid();
    s * (S::one() + x * (S::one() - s))
}

pub fn silu_forward<S: Real>(input: &FeatureMap<S>) -> FeatureMap<S> {
    let mut out = input.clone();
    for v in &mut out.data {
        *v = silu(*v);
    }
    out
}

pub fn silu_backward<S: Real>(input: &FeatureMap<S>, d_out: &FeatureMap<S>) -> FeatureMap<S> {
    let mut d_input = FeatureMap::zeros(input.channels, input.height, input.width, input.stride);
    for i in 0..input.data.len() {
        d_input.data[i] = d_out.data[i] * silu_grad(input.data[i]);
    }
    d_input
}

/// Fully connected layer: `out[o] = bias[o] + sum_i weight[o * n_in + i] * input[i]`.
pub fn linear_forward<S: Real>(input: &[S], weight: &[S], bias: &[S], out: &mut [S]) {
    let n_in = input.len();
    let n_out = bias.len();
    debug_assert_eq!(weight.len(), n_in * n_out);
    debug_assert_eq!(out.len(), n_out);
    for o in 0..n_out {
        let row = &weight[o * n_in..(o + 1) * n_in];
        let mut acc = bias[o];
        for i in 0..n_in {
            acc += row[i] * input[i];
        }
        out[o] = acc;
    }
}

/// Backward pass of [`linear_forward`]. `d_input` is overwritten.
pub fn linear_backward<S: Real>(
    input: &[S],
    weight: &[S],
    d_out: &[S],
    d_weight: &mut [S],
    d_bias: &mut [S],
    d_input: &mut [S],
) {
    let n_in = input.len();
    let n_out = d_out.len();
    debug_assert_eq!(weight.len(), n_in * n_out);
    debug_assert_eq!(d_weight.len(), n_in * n_out);
    debug_assert_eq!(d_bias.len(), n_out);
    debug_assert_eq!(d_input.len(), n_in);
    for v in d_input.iter_mut() {
        *v = S::zero();
    }
    for o in 0..n_out {
        let g = d_out[o];
        d_bias[o] += g;
        let row = &weight[o * n_in..(o + 1) * n_in];
        let d_row = &mut d_weight[o * n_in..(o + 1) * n_in];
        for i in 0..n_in {
            d_row[i] += g * input[i];
            d_input[i] += g * row[i];
        }
    }
}

/// Where one bilinear lookup landed: the four corner cells (flat spatial
/// indices) and their interpolation weights, kept so the backward pass can
/// scatter gradients without redoing the coordinate arithmetic.
#[derive(Debug, Clone, Copy)]
pub struct BilinearTap<S> {
    pub corners: [usize; 4],
    pub weights: [S; 4],
}

/// Bilinearly interpolates the feature map at pixel position `(u, v)`.
///
/// The pixel position is converted to continuous cell coordinates as
/// `u / stride - 0.5` (so a cell-center pixel maps exactly onto that cell),
/// then clamped to the valid cell range: queries outside the image read the
/// nearest edge cell. Writes the `channels` interpolated values into `out`.
pub fn bilinear_sample<S: Real>(map: &FeatureMap<S>, u: S, v: S, out: &mut [S]) -> BilinearTap<S> {
    debug_assert_eq!(out.len(), map.channels);
    let half = rl::<S>(0.5);
    let stride = rl::<S>(map.stride as f64);
    let fx = u / stride - half;
    let fy = v / stride - half;
    let gx = fx.max(S::zero()).min(rl((map.width - 1) as f64));
    let gy = fy.max(S::zero()).min(rl((map.height - 1) as f64));
    let x0 = gx.floor().to_f64() as usize;
    let y0 = gy.floor().to_f64() as usize;
    let x1 = (x0 + 1).min(map.width - 1);
    let y1 = (y0 + 1).min(map.height - 1);
    let wx = gx - rl(x0 as f64);
    let wy = gy - rl(y0 as f64);
    let one = S::one();
    let tap = BilinearTap {
        corners: [
            y0 * map.width + x0,
            y0 * map.width + x1,
            y1 * map.width + x0,
            y1 * map.width + x1,
        ],
        weights: [
            (one - wy) * (one - wx),
            (one - wy) * wx,
            wy * (one - wx),
            wy * wx,
        ],
    };
    let plane = map.height * map.width;
    for (c, slot) in out.iter_mut().enumerate() {
        let base = c * plane;
        let mut acc = S::zero();
        for k in 0..4 {
            acc += tap.weights[k] * map.data[base + tap.corners[k]];
        }
        *slot = acc;
    }
    tap
}

/// Backward pass of [`bilinear_sample`]: scatters `d_out` into the feature
/// map gradient at the four corners recorded in `tap`. The query position is
/// a fixed geometric quantity, so no gradient flows to `(u, v)`.
pub fn bilinear_scatter<S: Real>(d_map: &mut FeatureMap<S>, tap: &BilinearTap<S>, d_out: &[S]) {
    debug_assert_eq!(d_out.len(), d_map.channels);
    let plane = d_map.height * d_map.width;
    for (c, &g) in d_out.iter().enumerate() {
        let base = c * plane;
        for k in 0..4 {
            d_map.data[base + tap.corners[k]] += tap.weights[k] * g;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::nn::params::seeded_rng;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    fn random_map(c: usize, h: usize, w: usize, stride: usize, seed: u64) -> FeatureMap<f64> {
        let mut rng = seeded_rng(seed);
        let data = (0..c * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
        FeatureMap::from_data(c, h, w, stride, data)
    }

    #[test]
    fn conv_output_dims_follow_stride_chain() {
        let img = FeatureMap::<f64>::zeros(3, 128, 128, 1);
        let widths = [16usize, 32, 32, 32];
        let strides = [2usize, 2, 1, 1];
        let mut cur = img;
        for (i, (&c_out, &s)) in widths.iter().zip(&strides).enumerate() {
            let w = vec![0.0; c_out * cur.channels * 9];
            let b = vec![0.0; c_out];
            cur = conv3x3_forward(&cur, &w, &b, s);
            let expect_hw = [64, 32, 32, 32][i];
            assert_eq!((cur.height, cur.width), (expect_hw, expect_hw));
            assert_eq!(cur.channels, c_out);
        }
        assert_eq!(cur.stride, 4);
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let (c_in, c_out, h, w, stride) = (2usize, 3usize, 5usize, 4usize, 2usize);
        let input = random_map(c_in, h, w, 1, 11);
        let mut rng = seeded_rng(12);
        let mut weight: Vec<f64> = (0..c_out * c_in * 9)
            .map(|_| rng.gen_range(-0.5..0.5))
            .collect();
        let mut bias: Vec<f64> = (0..c_out).map(|_| rng.gen_range(-0.5..0.5)).collect();
        // Scalar objective: fixed random linear functional of the output.
        let out = conv3x3_forward(&input, &weight, &bias, stride);
        let coeffs: Vec<f64> = (0..out.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective = |input: &FeatureMap<f64>, weight: &[f64], bias: &[f64]| -> f64 {
            let o = conv3x3_forward(input, weight, bias, stride);
            o.data.iter().zip(&coeffs).map(|(a, b)| a * b).sum()
        };

        let mut d_out = out.clone();
        d_out.data.copy_from_slice(&coeffs);
        let mut d_weight = vec![0.0; weight.len()];
        let mut d_bias = vec![0.0; bias.len()];
        let d_input = conv3x3_backward(&input, &weight, stride, &d_out, &mut d_weight, &mut d_bias);

        let h_fd = 1e-5;
        let mut input = input;
        for i in [0usize, 7, 19, c_in * h * w - 1] {
            let orig = input.data[i];
            input.data[i] = orig + h_fd;
            let fp = objective(&input, &weight, &bias);
            input.data[i] = orig - h_fd;
            let fm = objective(&input, &weight, &bias);
            input.data[i] = orig;
            assert!(rel_err(d_input.data[i], (fp - fm) / (2.0 * h_fd)) < 1e-6);
        }
        for i in [0usize, 13, weight.len() - 1] {
            let orig = weight[i];
            weight[i] = orig + h_fd;
            let fp = objective(&input, &weight, &bias);
            weight[i] = orig - h_fd;
            let fm = objective(&input, &weight, &bias);
            weight[i] = orig;
            assert!(rel_err(d_weight[i], (fp - fm) / (2.0 * h_fd)) < 1e-6);
        }
        for i in 0..bias.len() {
            let orig = bias[i];
            bias[i] = orig + h_fd;
            let fp = objective(&input, &weight, &bias);
            bias[i] = orig - h_fd;
            let fm = objective(&input, &weight, &bias);
            bias[i] = orig;
            assert!(rel_err(d_bias[i], (fp - fm) / (2.0 * h_fd)) < 1e-6);
        }
    }

    #[test]
    fn group_norm_is_per_position_and_normalizes_each_group() {
        let (c, groups) = (8usize, 4usize);
        let input = random_map(c, 3, 5, 1, 21);
        let gamma = vec![1.0; c];
        let beta = vec![0.0; c];
        let out = group_norm_forward(&input, &gamma, &beta, groups);
        let gs = c / groups;
        for y in 0..3 {
            for x in 0..5 {
                for g in 0..groups {
                    let vals: Vec<f64> = (0..gs).map(|k| out.at(g * gs + k, y, x)).collect();
                    let raw: Vec<f64> = (0..gs).map(|k| input.at(g * gs + k, y, x)).collect();
                    let mean: f64 = vals.iter().sum::<f64>() / gs as f64;
                    let var: f64 = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / gs as f64;
                    let raw_mean: f64 = raw.iter().sum::<f64>() / gs as f64;
                    let raw_var: f64 =
                        raw.iter().map(|v| (v - raw_mean).powi(2)).sum::<f64>() / gs as f64;
                    assert!(mean.abs() < 1e-12);
                    // The epsilon in the denominator shrinks the output
                    // variance to exactly var/(var + eps).
                    assert!((var - raw_var / (raw_var + 1e-5)).abs() < 1e-9);
                }
            }
        }

        // Locality: perturbing one position must not change any other position.
        let mut bumped = input.clone();
        let bump_at = bumped.idx(3, 1, 2);
        bumped.data[bump_at] += 0.7;
        let out2 = group_norm_forward(&bumped, &gamma, &beta, groups);
        for y in 0..3 {
            for x in 0..5 {
                for ci in 0..c {
                    let same = (out.at(ci, y, x) - out2.at(ci, y, x)).abs() < 1e-14;
                    if (y, x) == (1, 2) {
                        continue;
                    }
                    assert!(same, "position ({y},{x}) channel {ci} changed");
                }
            }
        }
    }

    #[test]
    fn group_norm_gradients_match_finite_differences() {
        let (c, groups) = (6usize, 2usize);
        let input = random_map(c, 2, 3, 1, 31);
        let mut rng = seeded_rng(32);
        let mut gamma: Vec<f64> = (0..c).map(|_| rng.gen_range(0.5..1.5)).collect();
        let beta: Vec<f64> = (0..c).map(|_| rng.gen_range(-0.3..0.3)).collect();
        let out = group_norm_forward(&input, &gamma, &beta, groups);
        let coeffs: Vec<f64> = (0..out.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective = |input: &FeatureMap<f64>, gamma: &[f64], beta: &[f64]| -> f64 {
            let o = group_norm_forward(input, gamma, beta, groups);
            o.data.iter().zip(&coeffs).map(|(a, b)| a * b).sum()
        };

        let mut d_out = out.clone();
        d_out.data.copy_from_slice(&coeffs);
        let mut d_gamma = vec![0.0; c];
        let mut d_beta = vec![0.0; c];
        let d_input =
            group_norm_backward(&input, &gamma, groups, &d_out, &mut d_gamma, &mut d_beta);

        let h_fd = 1e-5;
        let mut input = input;
        for i in [0usize, 5, 11, 17, input.data.len() - 1] {
            let orig = input.data[i];
            input.data[i] = orig + h_fd;
            let fp = objective(&input, &gamma, &beta);
            input.data[i] = orig - h_fd;
            let fm = objective(&input, &gamma, &beta);
            input.data[i] = orig;
            assert!(rel_err(d_input.data[i], (fp - fm) / (2.0 * h_fd)) < 1e-6);
        }
        for i in 0..c {
            let orig = gamma[i];
            gamma[i] = orig + h_fd;
            let fp = objective(&input, &gamma, &beta);
            gamma[i] = orig - h_fd;
            let fm = objective(&input, &gamma, &beta);
            gamma[i] = orig;
            assert!(rel_err(d_gamma[i], (fp - fm) / (2.0 * h_fd)) < 1e-6);
        }
        // Beta gradient is just the upstream gradient.
        for i in 0..c {
            let mut expect = 0.0;
            for y in 0..2 {
                for x in 0..3 {
                    expect += d_out.at(i, y, x);
                }
            }
            assert!(rel_err(d_beta[i], expect) < 1e-12);
        }
    }

    #[test]
    fn silu_values_and_gradient() {
        assert_eq!(silu(0.0f64), 0.0);
        assert!((silu(10.0f64) - 10.0).abs() < 1e-3);
        assert!(silu(-10.0f64).abs() < 1e-3);
        let h = 1e-6;
        for &x in &[-2.0f64, -0.3, 0.0, 0.7, 3.1] {
            let fd = (silu(x + h) - silu(x - h)) / (2.0 * h);
            assert!(rel_err(silu_grad(x), fd) < 1e-7, "x = {x}");
        }
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let (n_in, n_out) = (7usize, 4usize);
        let mut rng = seeded_rng(41);
        let mut input: Vec<f64> = (0..n_in).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut weight: Vec<f64> = (0..n_in * n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut bias: Vec<f64> = (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let coeffs: Vec<f64> = (0..n_out).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let objective = |input: &[f64], weight: &[f64], bias: &[f64]| -> f64 {
            let mut out = vec![0.0; n_out];
            linear_forward(input, weight, bias, &mut out);
            out.iter().zip(&coeffs).map(|(a, b)| a * b).sum()
        };

        let mut d_weight = vec![0.0; weight.len()];
        let mut d_bias = vec![0.0; n_out];
        let mut d_input = vec![0.0; n_in];
        linear_backward(&input, &weight, &coeffs, &mut d_weight, &mut d_bias, &mut d_input);

        let h = 1e-5;
        for i in 0..n_in {
            let orig = input[i];
            input[i] = orig + h;
            let fp = objective(&input, &weight, &bias);
            input[i] = orig - h;
            let fm = objective(&input, &weight, &bias);
            input[i] = orig;
            assert!(rel_err(d_input[i], (fp - fm) / (2.0 * h)) < 1e-7);
        }
        for i in (0..weight.len()).step_by(5) {
            let orig = weight[i];
            weight[i] = orig + h;
            let fp = objective(&input, &weight, &bias);
            weight[i] = orig - h;
            let fm = objective(&input, &weight, &bias);
            weight[i] = orig;
            assert!(rel_err(d_weight[i], (fp - fm) / (2.0 * h)) < 1e-7);
        }
        for i in 0..n_out {
            let orig = bias[i];
            bias[i] = orig + h;
            let fp = objective(&input, &weight, &bias);
            bias[i] = orig - h;
            let fm = objective(&input, &weight, &bias);
            bias[i] = orig;
            assert!(rel_err(d_bias[i], (fp - fm) / (2.0 * h)) < 1e-7);
        }
    }

    #[test]
    fn bilinear_sampling_matches_hand_picked_cases() {
        // 2-channel 4x4 map at stride 4; cell (x, y) holds value 10*y + x in
        // channel 0 and its negation in channel 1.
        let mut map = FeatureMap::<f64>::zeros(2, 4, 4, 4);
        for y in 0..4 {
            for x in 0..4 {
                map.set(0, y, x, (10 * y + x) as f64);
                map.set(1, y, x, -((10 * y + x) as f64));
            }
        }
        let mut out = [0.0; 2];

        // Pixel at the center of cell (2, 1): (2.5 * 4, 1.5 * 4) = (10, 6).
        bilinear_sample(&map, 10.0, 6.0, &mut out);
        assert_eq!(out, [12.0, -12.0]);

        // Midway between the centers of cells (1, 2) and (2, 2).
        bilinear_sample(&map, 8.0, 10.0, &mut out);
        assert_eq!(out, [21.5, -21.5]);

        // Far outside the image: clamps to the nearest edge cell.
        bilinear_sample(&map, 100.0 + 15.0, -100.0, &mut out);
        assert_eq!(out, [3.0, -3.0]);
    }

    #[test]
    fn bilinear_scatter_is_adjoint_of_sample() {
        let map = random_map(3, 4, 5, 4, 51);
        let mut rng = seeded_rng(52);
        let (u, v) = (rng.gen_range(0.0..20.0), rng.gen_range(0.0..16.0));
        let d_out: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();

        let mut out = vec![0.0; 3];
        let tap = bilinear_sample(&map, u, v, &mut out);
        let mut d_map = FeatureMap::zeros(3, 4, 5, 4);
        bilinear_scatter(&mut d_map, &tap, &d_out);

        // <scatter(d_out), m> must equal <d_out, sample(m)> for any m; check
        // against finite differences of the sampling output instead.
        let h = 1e-5;
        let mut map = map;
        for i in [0usize, 7, 13, map.data.len() - 1] {
            let orig = map.data[i];
            map.data[i] = orig + h;
            let mut op = vec![0.0; 3];
            bilinear_sample(&map, u, v, &mut op);
            map.data[i] = orig - h;
            let mut om = vec![0.0; 3];
            bilinear_sample(&map, u, v, &mut om);
            map.data[i] = orig;
            let fd: f64 = (0..3).map(|c| d_out[c] * (op[c] - om[c]) / (2.0 * h)).sum();
            assert!(rel_err(d_map.data[i], fd) < 1e-7 || (d_map.data[i] == 0.0 && fd.abs() < 1e-9));
        }
    }
}
