//! Convolutional image encoder: four 3x3 convolution blocks (strides
//! 2, 2, 1, 1; widths 16, 32, 32, 32), each followed by per-position group
//! normalization and SiLU. The result is a stride-4, 32-channel feature map,
//! so a 128x128 image encodes to 32x32 cells.
//!
//! Every operation is local: with the stride chain above the receptive field
//! is 3 + 2*2 + 2*4 + 2*4 = 23 input pixels per axis, so output cell `i`
//! (center pixel `4i + 2`) depends only on input pixels `[4i - 11, 4i + 11]`.

use std::ops::Range;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::layers::{
    conv3x3_backward, conv3x3_forward, group_norm_backward, group_norm_forward, silu_backward,
    silu_forward, FeatureMap,
};
use crate::nn::params::{split_two, xavier_fill, ParamLayout};
use crate::render::RenderedImage;
use crate::scalar::{rl, Real};

pub const ENCODER_WIDTHS: [usize; 4] = [16, 32, 32, 32];
pub const ENCODER_STRIDES: [usize; 4] = [2, 2, 1, 1];
pub const ENCODER_GROUPS: usize = 4;
/// Product of the block strides: input pixels per output cell.
pub const ENCODER_STRIDE: usize = 4;
/// Output channel count.
pub const ENCODER_CHANNELS: usize = 32;
/// Receptive-field half width in input pixels: an output cell centered at
/// pixel c reads only pixels [c - 11, c + 11].
pub const ENCODER_RF_HALF: usize = 11;

/// Flat-vector ranges of one encoder block's tensors.
#[derive(Debug, Clone)]
pub struct BlockRanges {
    pub conv_weight: Range<usize>,
    pub conv_bias: Range<usize>,
    pub gn_gamma: Range<usize>,
    pub gn_beta: Range<usize>,
    pub c_in: usize,
    pub c_out: usize,
    pub stride: usize,
}

/// The encoder's view into the shared parameter layout.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub blocks: Vec<BlockRanges>,
    pub groups: usize,
}

/// Activations saved by the tracked forward pass, consumed by `backward`.
/// Per block: the block input, the convolution output, and the normalization
/// output (which feeds SiLU).
pub struct EncoderTape<S> {
    blocks: Vec<(FeatureMap<S>, FeatureMap<S>, FeatureMap<S>)>,
}

impl Encoder {
    /// Registers all encoder tensors in `layout`.
    pub fn register(layout: &mut ParamLayout) -> Self {
        let mut blocks = Vec::new();
        let mut c_in = 3;
        for (i, (&c_out, &stride)) in ENCODER_WIDTHS.iter().zip(&ENCODER_STRIDES).enumerate() {
            let conv_weight =
                layout.add(&format!("encoder.block{i}.conv.weight"), &[c_out, c_in, 3, 3]);
            let conv_bias = layout.add(&format!("encoder.block{i}.conv.bias"), &[c_out]);
            let gn_gamma = layout.add(&format!("encoder.block{i}.norm.gamma"), &[c_out]);
            let gn_beta = layout.add(&format!("encoder.block{i}.norm.beta"), &[c_out]);
            blocks.push(BlockRanges {
                conv_weight,
                conv_bias,
                gn_gamma,
                gn_beta,
                c_in,
                c_out,
                stride,
            });
            c_in = c_out;
        }
        Self {
            blocks,
            groups: ENCODER_GROUPS,
        }
    }

    /// Xavier-uniform convolution weights; biases and shifts stay zero,
    /// normalization scales start at one.
    pub fn init<S: Real>(&self, params: &mut [S], rng: &mut ChaCha8Rng) {
        for b in &self.blocks {
            xavier_fill(&mut params[b.conv_weight.clone()], b.c_in * 9, b.c_out * 9, rng);
            for v in &mut params[b.gn_gamma.clone()] {
                *v = S::one();
            }
        }
    }

    fn run<S: Real>(
        &self,
        params: &[S],
        image: FeatureMap<S>,
        tape: Option<&mut Vec<(FeatureMap<S>, FeatureMap<S>, FeatureMap<S>)>>,
    ) -> FeatureMap<S> {
        let mut tape = tape;
        let mut cur = image;
        for b in &self.blocks {
            let conv_out = conv3x3_forward(
                &cur,
                &params[b.conv_weight.clone()],
                &params[b.conv_bias.clone()],
                b.stride,
            );
            let gn_out = group_norm_forward(
                &conv_out,
                &params[b.gn_gamma.clone()],
                &params[b.gn_beta.clone()],
                self.groups,
            );
            let act = silu_forward(&gn_out);
            if let Some(t) = tape.as_deref_mut() {
                t.push((cur, conv_out, gn_out));
            }
            cur = act;
        }
        cur
    }

    /// Forward pass without saved activations (inference).
    pub fn forward<S: Real>(&self, params: &[S], image: &RenderedImage) -> Result<FeatureMap<S>> {
        Ok(self.run(params, image_to_map(image)?, None))
    }

    /// Forward pass that records the activations needed for `backward`.
    pub fn forward_tracked<S: Real>(
        &self,
        params: &[S],
        image: &RenderedImage,
    ) -> Result<(FeatureMap<S>, EncoderTape<S>)> {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        let out = self.run(params, image_to_map(image)?, Some(&mut blocks));
        Ok((out, EncoderTape { blocks }))
    }

    /// Backpropagates `d_out` (gradient w.r.t. the output feature map)
    /// through the encoder, accumulating parameter gradients into `grads`.
    pub fn backward<S: Real>(
        &self,
        params: &[S],
        tape: &EncoderTape<S>,
        d_out: FeatureMap<S>,
        grads: &mut [S],
    ) {
        let mut d = d_out;
        for (b, (input, conv_out, gn_out)) in self.blocks.iter().zip(&tape.blocks).rev() {
            let d_gn_out = silu_backward(gn_out, &d);
            let (d_gamma, d_beta) = {
                // Split disjoint gradient slices without cloning.
                let (gslice, bslice) = split_two(grads, b.gn_gamma.clone(), b.gn_beta.clone());
                (gslice, bslice)
            };
            let d_conv_out = group_norm_backward(
                conv_out,
                &params[b.gn_gamma.clone()],
                self.groups,
                &d_gn_out,
                d_gamma,
                d_beta,
            );
            let (d_weight, d_bias) = split_two(grads, b.conv_weight.clone(), b.conv_bias.clone());
            d = conv3x3_backward(
                input,
                &params[b.conv_weight.clone()],
                b.stride,
                &d_conv_out,
                d_weight,
                d_bias,
            );
        }
    }
}

/// Converts an 8-bit RGB image to a channel-major feature map with values
/// in [0, 1]. Image dimensions must be divisible by the encoder stride so
/// that the feature grid tiles the image exactly.
pub fn image_to_map<S: Real>(image: &RenderedImage) -> Result<FeatureMap<S>> {
    let (w, h) = (image.width as usize, image.height as usize);
    if w % ENCODER_STRIDE != 0 || h % ENCODER_STRIDE != 0 {
        return Err(Error::ShapeError(format!(
            "image {w}x{h} is not divisible by encoder stride {ENCODER_STRIDE}"
        )));
    }
    let mut map = FeatureMap::zeros(3, h, w, 1);
    let scale = rl::<S>(1.0 / 255.0);
    for y in 0..h {
        for x in 0..w {
            let px = (y * w + x) * 3;
            for c in 0..3 {
                map.set(c, y, x, rl::<S>(image.rgb[px + c] as f64) * scale);
            }
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    use crate::nn::params::seeded_rng;

    fn tiny_image(w: usize, h: usize, seed: u64) -> RenderedImage {
        let mut rng = seeded_rng(seed);
        RenderedImage {
            width: w as u32,
            height: h as u32,
            rgb: (0..w * h * 3).map(|_| rng.gen::<u8>()).collect(),
        }
    }

    fn init_model(seed: u64) -> (Encoder, Vec<f64>) {
        let mut layout = ParamLayout::new();
        let enc = Encoder::register(&mut layout);
        let mut params = vec![0.0f64; layout.total()];
        enc.init(&mut params, &mut seeded_rng(seed));
        (enc, params)
    }

    #[test]
    fn shape_chain_and_stride() {
        let (enc, params) = init_model(1);
        let out = enc.forward(&params, &tiny_image(128, 128, 2)).unwrap();
        assert_eq!(
            (out.channels, out.height, out.width, out.stride),
            (ENCODER_CHANNELS, 32, 32, 4)
        );
    }

    #[test]
    fn rejects_images_not_divisible_by_stride() {
        let (enc, params) = init_model(1);
        assert!(matches!(
            enc.forward(&params, &tiny_image(126, 128, 2)),
            Err(Error::ShapeError(_))
        ));
    }

    #[test]
    fn zero_image_stays_bounded() {
        let (enc, params) = init_model(3);
        let img = RenderedImage {
            width: 64,
            height: 64,
            rgb: vec![0u8; 64 * 64 * 3],
        };
        let out = enc.forward(&params, &img).unwrap();
        assert!(out.data.iter().all(|v| v.is_finite() && v.abs() < 100.0));
    }

    #[test]
    fn one_pixel_change_stays_inside_receptive_field() {
        let (enc, params) = init_model(4);
        let img = tiny_image(128, 128, 5);
        let mut bumped = img.clone();
        // Flip one pixel in the interior.
        let (px, py) = (67usize, 41usize);
        let at = (py * 128 + px) * 3;
        bumped.rgb[at] = bumped.rgb[at].wrapping_add(128);

        let a = enc.forward(&params, &img).unwrap();
        let b = enc.forward(&params, &bumped).unwrap();
        // Output cell i touches input pixels [4i - 11, 4i + 11] (interval
        // composition over strides 2, 2, 1, 1), so pixel p may influence
        // cell i only when |4i - p| <= 11; the check runs per axis.
        let affected = |p: usize, i: usize| -> bool {
            let lo = (4 * i) as isize - ENCODER_RF_HALF as isize;
            let hi = (4 * i) as isize + ENCODER_RF_HALF as isize;
            (p as isize) >= lo && (p as isize) <= hi
        };
        let mut changed_any = false;
        for c in 0..a.channels {
            for y in 0..a.height {
                for x in 0..a.width {
                    let differs = (a.at(c, y, x) - b.at(c, y, x)).abs() > 0.0;
                    if differs {
                        changed_any = true;
                        assert!(
                            affected(px, x) && affected(py, y),
                            "cell ({x},{y}) outside the receptive field of pixel ({px},{py}) changed"
                        );
                    }
                }
            }
        }
        assert!(changed_any, "perturbation had no effect at all");
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let (enc, mut params) = init_model(6);
        let img = tiny_image(16, 16, 7);
        let mut rng = seeded_rng(8);

        let (out, tape) = enc.forward_tracked(&params, &img).unwrap();
        let coeffs: Vec<f64> = (0..out.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut d_out = out.clone();
        d_out.data.copy_from_slice(&coeffs);
        let mut grads = vec![0.0; params.len()];
        enc.backward(&params, &tape, d_out, &mut grads);

        let objective = |enc: &Encoder, params: &[f64]| -> f64 {
            let o = enc.forward(params, &img).unwrap();
            o.data.iter().zip(&coeffs).map(|(a, b)| a * b).sum()
        };

        // Probe a few parameters from every tensor.
        let h = 1e-5;
        let mut checked = 0;
        for b in enc.blocks.clone() {
            for range in [b.conv_weight, b.conv_bias, b.gn_gamma, b.gn_beta] {
                let len = range.end - range.start;
                for k in 0..3.min(len) {
                    let i = range.start + (k * 97) % len;
                    let orig = params[i];
                    params[i] = orig + h;
                    let fp = objective(&enc, &params);
                    params[i] = orig - h;
                    let fm = objective(&enc, &params);
                    params[i] = orig;
                    let fd = (fp - fm) / (2.0 * h);
                    let rel = (grads[i] - fd).abs() / grads[i].abs().max(fd.abs()).max(1e-6);
                    assert!(rel < 1e-5, "param {i}: analytic {} vs fd {}", grads[i], fd);
                    checked += 1;
                }
            }
        }
        assert!(checked >= 40);
    }

    #[test]
    fn forward_is_deterministic() {
        let (enc, params) = init_model(9);
        let img = tiny_image(64, 64, 10);
        let a = enc.forward(&params, &img).unwrap();
        let b = enc.forward(&params, &img).unwrap();
        assert_eq!(a.data, b.data);
    }
}
