//! The three pose models behind one flat parameter vector. All share the
//! same convolutional encoder (controlled comparison); they differ only in
//! how the decoder MLP is wired:
//!
//! * **field** — the per-point implicit decoder: input is the bilinearly
//!   sampled feature at the point's projection plus its normalized depth
//!   (plus, optionally, the normalized hand scale); output is a signed
//!   distance and one (weight, direction) vote entry per joint.
//! * **holistic** — global average pooling over the feature map, then the
//!   MLP regresses all joint coordinates at once.
//! * **dense2d** — the MLP runs on every feature cell and predicts a
//!   foreground confidence plus per-joint (weight, absolute position) votes.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::camera::Frustum;
use crate::error::{Error, Result};
use crate::math::{Point3, Vec3};
use crate::nn::encoder::{Encoder, EncoderTape, ENCODER_CHANNELS};
use crate::nn::layers::{
    bilinear_sample, bilinear_scatter, linear_backward, linear_forward, silu, silu_grad,
    BilinearTap, FeatureMap,
};
use crate::nn::params::{seeded_rng, split_two, xavier_fill, ParamLayout};
use crate::pose_field::{FieldSample, JointSet, OffsetVector4, Space, VotingParams};
use crate::render::RenderedImage;
use crate::scalar::{rl, Real};
use crate::scene::{reference_camera, Z_FAR, Z_NEAR};

/// Below this raw norm a predicted direction is emitted as exactly zero
/// (and receives no gradient), keeping outputs on the unit-or-zero manifold.
pub const DIRECTION_EPS: f64 = 1e-8;
/// Hand-scale conditioning input = hand_scale / this (mm), keeping it O(1).
pub const SCALE_NORMALIZER: f64 = 100.0;
/// Coordinate heads emit anchor + OUT_SCALE * raw, so a raw unit step spans
/// the working volume and zero-initialized heads start at the anchor.
pub const OUT_SCALE: f64 = 300.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Field,
    Holistic,
    Dense2d,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Field => "field",
            ModelKind::Holistic => "holistic",
            ModelKind::Dense2d => "dense2d",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "field" => Ok(ModelKind::Field),
            "holistic" => Ok(ModelKind::Holistic),
            "dense2d" => Ok(ModelKind::Dense2d),
            other => Err(Error::Config(format!("unknown model kind {other:?}"))),
        }
    }
}

/// Architecture and loss configuration shared by training, inference, and
/// checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelConfig<S> {
    pub kind: ModelKind,
    /// Number of joints T.
    pub joint_count: usize,
    /// Hidden layer widths of the decoder MLP.
    pub hidden: Vec<usize>,
    /// Joint coordinate space the model is trained for.
    pub space: Space,
    /// When true the field decoder receives the normalized hand scale as an
    /// extra input.
    pub scale_conditioning: bool,
    /// Working volume; also provides the depth normalization range in
    /// camera mode, the coordinate-head anchor, and the fallback centroid.
    pub frustum: Frustum<S>,
    /// Half extent (mm) of the root-centered sampling cube; the depth
    /// normalizer in root-relative mode.
    pub root_half_extent: S,
    /// Field construction / vote aggregation parameters (delta, r, K, frac).
    pub voting: VotingParams<S>,
    /// Offset-loss weight: 0.1 in camera space, 10 root-relative.
    pub lambda: S,
    /// Vote-loss weight of the dense 2D baseline.
    pub lambda_dense: S,
}

impl<S: Real> ModelConfig<S> {
    pub fn new(kind: ModelKind, space: Space) -> Self {
        Self {
            kind,
            joint_count: crate::hand::JOINT_COUNT,
            hidden: vec![128, 64, 64, 32],
            space,
            scale_conditioning: false,
            frustum: Frustum {
                cam: reference_camera(),
                z_near: rl(Z_NEAR),
                z_far: rl(Z_FAR),
            },
            root_half_extent: rl(160.0),
            voting: VotingParams::default(),
            lambda: match space {
                Space::Camera => rl(0.1),
                Space::RootRelative => rl(10.0),
            },
            lambda_dense: rl(0.1),
        }
    }

    /// MLP input width for this configuration.
    pub fn input_width(&self) -> usize {
        match self.kind {
            ModelKind::Field => {
                ENCODER_CHANNELS + 1 + if self.scale_conditioning { 1 } else { 0 }
            }
            ModelKind::Holistic | ModelKind::Dense2d => ENCODER_CHANNELS,
        }
    }

    /// Raw MLP output width: 1 + 4T for the field and dense decoders
    /// (signed distance / confidence plus T 4D entries), 3T holistic.
    pub fn output_width(&self) -> usize {
        match self.kind {
            ModelKind::Field | ModelKind::Dense2d => 1 + 4 * self.joint_count,
            ModelKind::Holistic => 3 * self.joint_count,
        }
    }

    /// Anchor of the coordinate heads: absolute positions are predicted as
    /// anchor + OUT_SCALE * raw. Camera-space models anchor at the frustum
    /// centroid; root-relative models anchor at the cube center (origin).
    pub fn anchor(&self) -> Point3<S> {
        match self.space {
            Space::Camera => self.frustum.centroid(),
            Space::RootRelative => Point3::zero(),
        }
    }

    /// Maps a depth to the MLP's normalized depth input: [z_near, z_far] to
    /// [-1, 1] in camera mode, z-offset from the root over the cube half
    /// extent in root-relative mode.
    pub fn normalize_depth(&self, z: S, root_z: Option<S>) -> S {
        match self.space {
            Space::Camera => {
                let two = rl::<S>(2.0);
                two * (z - self.frustum.z_near) / (self.frustum.z_far - self.frustum.z_near)
                    - S::one()
            }
            Space::RootRelative => (z - root_z.unwrap_or(S::zero())) / self.root_half_extent,
        }
    }
}

/// Per-scene side inputs to the field decoder that are not learned: the
/// root position (root-relative mode only) and the hand scale (only read
/// when scale conditioning is enabled).
#[derive(Debug, Clone, Copy, Default)]
pub struct QueryContext<S> {
    pub root: Option<Point3<S>>,
    pub hand_scale: Option<S>,
}

/// Decoder MLP: hidden layers with SiLU, linear output head.
#[derive(Debug, Clone)]
pub struct Mlp {
    /// (weight, bias) ranges per linear layer.
    pub layers: Vec<(Range<usize>, Range<usize>)>,
    /// Layer widths including input and output.
    pub dims: Vec<usize>,
}

/// Saved activations of one MLP evaluation: the input of every linear layer
/// and its pre-activation output.
pub struct MlpTape<S> {
    xs: Vec<Vec<S>>,
    zs: Vec<Vec<S>>,
}

impl Mlp {
    pub fn register(layout: &mut ParamLayout, dims: &[usize]) -> Self {
        let mut layers = Vec::new();
        for l in 0..dims.len() - 1 {
            let w = layout.add(&format!("mlp.layer{l}.weight"), &[dims[l + 1], dims[l]]);
            let b = layout.add(&format!("mlp.layer{l}.bias"), &[dims[l + 1]]);
            layers.push((w, b));
        }
        Self {
            layers,
            dims: dims.to_vec(),
        }
    }

    pub fn init<S: Real>(&self, params: &mut [S], rng: &mut rand_chacha::ChaCha8Rng) {
        for (l, (w, _)) in self.layers.iter().enumerate() {
            xavier_fill(&mut params[w.clone()], self.dims[l], self.dims[l + 1], rng);
        }
    }

    /// Plain forward pass; returns the raw (pre-head) output vector.
    pub fn forward<S: Real>(&self, params: &[S], input: &[S]) -> Vec<S> {
        debug_assert_eq!(input.len(), self.dims[0]);
        let mut x = input.to_vec();
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let mut z = vec![S::zero(); self.dims[l + 1]];
            linear_forward(&x, &params[w.clone()], &params[b.clone()], &mut z);
            if l != last {
                for v in &mut z {
                    *v = silu(*v);
                }
            }
            x = z;
        }
        x
    }

    /// Forward pass that saves the activations needed by [`Mlp::backward`].
    pub fn forward_tracked<S: Real>(&self, params: &[S], input: &[S]) -> (Vec<S>, MlpTape<S>) {
        let mut xs = Vec::with_capacity(self.layers.len());
        let mut zs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        let last = self.layers.len() - 1;
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let mut z = vec![S::zero(); self.dims[l + 1]];
            linear_forward(&x, &params[w.clone()], &params[b.clone()], &mut z);
            xs.push(std::mem::take(&mut x));
            zs.push(z.clone());
            if l != last {
                for v in &mut z {
                    *v = silu(*v);
                }
            }
            x = z;
        }
        (x, MlpTape { xs, zs })
    }

    /// Backpropagates a gradient w.r.t. the raw output; accumulates into
    /// `grads` and returns the gradient w.r.t. the input vector.
    pub fn backward<S: Real>(
        &self,
        params: &[S],
        tape: &MlpTape<S>,
        d_raw: &[S],
        grads: &mut [S],
    ) -> Vec<S> {
        let mut d_z = d_raw.to_vec();
        let last = self.layers.len() - 1;
        for l in (0..self.layers.len()).rev() {
            if l != last {
                // d_z arrives as the gradient w.r.t. silu(z); fold in silu'.
                for (dv, &z) in d_z.iter_mut().zip(&tape.zs[l]) {
                    *dv *= silu_grad(z);
                }
            }
            let (w, b) = &self.layers[l];
            let mut d_x = vec![S::zero(); self.dims[l]];
            {
                let (dw, db) = split_two(grads, w.clone(), b.clone());
                linear_backward(&tape.xs[l], &params[w.clone()], &d_z, dw, db, &mut d_x);
            }
            d_z = d_x;
        }
        d_z
    }
}

/// A model: configuration, parameter layout, and the flat parameter vector.
#[derive(Debug, Clone)]
pub struct Model<S> {
    pub cfg: ModelConfig<S>,
    pub encoder: Encoder,
    pub mlp: Mlp,
    pub layout: ParamLayout,
    pub params: Vec<S>,
}

/// Builds the parameter layout for a configuration without materializing a
/// model (used by checkpoint validation).
pub fn build_layout<S: Real>(cfg: &ModelConfig<S>) -> (ParamLayout, Encoder, Mlp) {
    let mut layout = ParamLayout::new();
    let encoder = Encoder::register(&mut layout);
    let mut dims = vec![cfg.input_width()];
    dims.extend_from_slice(&cfg.hidden);
    dims.push(cfg.output_width());
    let mlp = Mlp::register(&mut layout, &dims);
    (layout, encoder, mlp)
}

impl<S: Real> Model<S> {
    /// Fresh model with seeded initialization.
    pub fn new(cfg: ModelConfig<S>, seed: u64) -> Self {
        let (layout, encoder, mlp) = build_layout(&cfg);
        let mut params = vec![S::zero(); layout.total()];
        let mut rng = seeded_rng(seed);
        encoder.init(&mut params, &mut rng);
        mlp.init(&mut params, &mut rng);
        Self {
            cfg,
            encoder,
            mlp,
            layout,
            params,
        }
    }

    pub fn encode(&self, image: &RenderedImage) -> Result<FeatureMap<S>> {
        self.encoder.forward(&self.params, image)
    }

    pub fn encode_tracked(&self, image: &RenderedImage) -> Result<(FeatureMap<S>, EncoderTape<S>)> {
        self.encoder.forward_tracked(&self.params, image)
    }

    /// Builds the field decoder's input vector for one query point: sampled
    /// feature, normalized depth, optional normalized hand scale. Query
    /// points are always camera-frame (positive depth); in root-relative
    /// mode only the depth normalization is root-centered, which removes
    /// absolute depth from the network's inputs.
    pub fn field_input(
        &self,
        f: &FeatureMap<S>,
        p: Point3<S>,
        ctx: &QueryContext<S>,
    ) -> Result<(Vec<S>, BilinearTap<S>)> {
        let uv = crate::camera::project(p, &self.cfg.frustum.cam)?;
        let mut input = vec![S::zero(); self.cfg.input_width()];
        let tap = bilinear_sample(f, uv.u, uv.v, &mut input[..ENCODER_CHANNELS]);
        input[ENCODER_CHANNELS] = self.cfg.normalize_depth(p.z, ctx.root.map(|r| r.z));
        if self.cfg.scale_conditioning {
            let scale = ctx.hand_scale.ok_or_else(|| {
                Error::Config("scale conditioning enabled but no hand scale provided".into())
            })?;
            input[ENCODER_CHANNELS + 1] = scale / rl(SCALE_NORMALIZER);
        }
        Ok((input, tap))
    }

    /// Field decoder forward pass for one query point.
    pub fn forward_field(
        &self,
        f: &FeatureMap<S>,
        p: Point3<S>,
        ctx: &QueryContext<S>,
    ) -> Result<FieldSample<S>> {
        let (input, _) = self.field_input(f, p, ctx)?;
        let raw = self.mlp.forward(&self.params, &input);
        Ok(field_head(&raw, self.cfg.joint_count))
    }

    /// Global average pooling over the feature map: mean per channel.
    pub fn pool(&self, f: &FeatureMap<S>) -> Vec<S> {
        pool_mean(f)
    }

    /// Holistic forward pass: pooled feature -> MLP -> T absolute joints.
    pub fn forward_holistic(&self, f: &FeatureMap<S>) -> JointSet<S> {
        let pooled = pool_mean(f);
        let raw = self.mlp.forward(&self.params, &pooled);
        coordinate_head(&raw, self.cfg.anchor(), self.cfg.joint_count)
    }

    /// Dense forward pass: the MLP runs on every feature cell.
    pub fn forward_dense2d(&self, f: &FeatureMap<S>) -> DenseMap<S> {
        let mut cells = Vec::with_capacity(f.height * f.width);
        let mut input = vec![S::zero(); ENCODER_CHANNELS];
        let plane = f.height * f.width;
        for i in 0..plane {
            for c in 0..ENCODER_CHANNELS {
                input[c] = f.data[c * plane + i];
            }
            let raw = self.mlp.forward(&self.params, &input);
            cells.push(dense_head(&raw, self.cfg.anchor(), self.cfg.joint_count));
        }
        DenseMap {
            height: f.height,
            width: f.width,
            cells,
        }
    }
}

/// Splits the raw field-decoder output into (s, votes): s is the raw linear
/// unit, each vote weight passes through the logistic, and each direction is
/// the raw 3-vector normalized to unit length (or zero below DIRECTION_EPS).
pub fn field_head<S: Real>(raw: &[S], t: usize) -> FieldSample<S> {
    debug_assert_eq!(raw.len(), 1 + 4 * t);
    let mut v = Vec::with_capacity(t);
    for i in 0..t {
        let base = 1 + 4 * i;
        let w = raw[base].sigmoid();
        let d = Vec3::new(raw[base + 1], raw[base + 2], raw[base + 3]);
        v.push(OffsetVector4 {
            w,
            d: d.normalized_or_zero(rl(DIRECTION_EPS)),
        });
    }
    FieldSample { s: raw[0], v }
}

/// Gradient of [`field_head`]: maps a gradient w.r.t. the FieldSample back
/// to the raw output vector. The direction's normalization Jacobian is
/// (I - u u^T) / |raw|; sub-epsilon raws get zero gradient (flat region).
pub fn field_head_backward<S: Real>(raw: &[S], d_sample: &FieldSample<S>) -> Vec<S> {
    let t = d_sample.v.len();
    let mut d_raw = vec![S::zero(); raw.len()];
    d_raw[0] = d_sample.s;
    let eps = rl::<S>(DIRECTION_EPS);
    for i in 0..t {
        let base = 1 + 4 * i;
        let w = raw[base].sigmoid();
        d_raw[base] = d_sample.v[i].w * w * (S::one() - w);
        let rd = Vec3::new(raw[base + 1], raw[base + 2], raw[base + 3]);
        let n = rd.norm();
        if n > eps {
            let u = rd / n;
            let g = d_sample.v[i].d;
            let proj = (g - u * u.dot(g)) / n;
            d_raw[base + 1] = proj.x;
            d_raw[base + 2] = proj.y;
            d_raw[base + 3] = proj.z;
        }
    }
    d_raw
}

/// Absolute-coordinate head: joint t = anchor + OUT_SCALE * raw[3t..3t+3].
pub fn coordinate_head<S: Real>(raw: &[S], anchor: Point3<S>, t: usize) -> JointSet<S> {
    debug_assert_eq!(raw.len(), 3 * t);
    let scale = rl::<S>(OUT_SCALE);
    JointSet::new(
        (0..t)
            .map(|i| {
                anchor
                    + Vec3::new(raw[3 * i], raw[3 * i + 1], raw[3 * i + 2]).scale(scale)
            })
            .collect(),
    )
}

/// Gradient of [`coordinate_head`]: d_raw = OUT_SCALE * d_joint.
pub fn coordinate_head_backward<S: Real>(d_joints: &[Vec3<S>]) -> Vec<S> {
    let scale = rl::<S>(OUT_SCALE);
    let mut d_raw = Vec::with_capacity(3 * d_joints.len());
    for g in d_joints {
        d_raw.push(scale * g.x);
        d_raw.push(scale * g.y);
        d_raw.push(scale * g.z);
    }
    d_raw
}

/// One dense-baseline cell: foreground confidence e, per-joint vote weights
/// (logistic, in (0,1)) and absolute joint positions.
#[derive(Debug, Clone)]
pub struct DenseCell<S> {
    pub e: S,
    pub w: Vec<S>,
    pub j: Vec<Point3<S>>,
}

/// Dense predictions over the whole feature grid, row-major cells.
#[derive(Debug, Clone)]
pub struct DenseMap<S> {
    pub height: usize,
    pub width: usize,
    pub cells: Vec<DenseCell<S>>,
}

/// Splits a raw dense-decoder output into (e, w_t, j_t) for one cell.
pub fn dense_head<S: Real>(raw: &[S], anchor: Point3<S>, t: usize) -> DenseCell<S> {
    debug_assert_eq!(raw.len(), 1 + 4 * t);
    let scale = rl::<S>(OUT_SCALE);
    let mut w = Vec::with_capacity(t);
    let mut j = Vec::with_capacity(t);
    for i in 0..t {
        let base = 1 + 4 * i;
        w.push(raw[base].sigmoid());
        j.push(anchor + Vec3::new(raw[base + 1], raw[base + 2], raw[base + 3]).scale(scale));
    }
    DenseCell {
        e: raw[0].sigmoid(),
        w,
        j,
    }
}

/// Gradient of [`dense_head`] given gradients w.r.t. (e, w, j).
pub fn dense_head_backward<S: Real>(
    raw: &[S],
    d_e: S,
    d_w: &[S],
    d_j: &[Vec3<S>],
) -> Vec<S> {
    let t = d_w.len();
    let mut d_raw = vec![S::zero(); raw.len()];
    let e = raw[0].sigmoid();
    d_raw[0] = d_e * e * (S::one() - e);
    let scale = rl::<S>(OUT_SCALE);
    for i in 0..t {
        let base = 1 + 4 * i;
        let w = raw[base].sigmoid();
        d_raw[base] = d_w[i] * w * (S::one() - w);
        d_raw[base + 1] = scale * d_j[i].x;
        d_raw[base + 2] = scale * d_j[i].y;
        d_raw[base + 3] = scale * d_j[i].z;
    }
    d_raw
}

/// Mean over all cells per channel.
pub fn pool_mean<S: Real>(f: &FeatureMap<S>) -> Vec<S> {
    let plane = f.height * f.width;
    let inv = rl::<S>(1.0 / plane as f64);
    (0..f.channels)
        .map(|c| {
            let mut acc = S::zero();
            for i in 0..plane {
                acc += f.data[c * plane + i];
            }
            acc * inv
        })
        .collect()
}

/// Backward of [`pool_mean`]: spreads each channel gradient uniformly.
pub fn pool_mean_backward<S: Real>(d_pooled: &[S], d_f: &mut FeatureMap<S>) {
    let plane = d_f.height * d_f.width;
    let inv = rl::<S>(1.0 / plane as f64);
    for (c, &g) in d_pooled.iter().enumerate() {
        let gv = g * inv;
        for i in 0..plane {
            d_f.data[c * plane + i] += gv;
        }
    }
}

/// Scatters a field-input gradient back into the feature-map gradient. Only
/// the sampled feature entries carry gradient; depth and scale inputs are
/// fixed geometric quantities.
pub fn scatter_field_input_grad<S: Real>(
    d_input: &[S],
    tap: &BilinearTap<S>,
    d_f: &mut FeatureMap<S>,
) {
    bilinear_scatter(d_f, tap, &d_input[..ENCODER_CHANNELS]);
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn field_model(scale_conditioning: bool) -> Model<f64> {
        let mut cfg = ModelConfig::new(ModelKind::Field, Space::Camera);
        cfg.scale_conditioning = scale_conditioning;
        Model::new(cfg, 7)
    }

    #[test]
    fn field_output_arity_and_ranges() {
        let model = field_model(false);
        assert_eq!(model.cfg.input_width(), 33);
        assert_eq!(model.cfg.output_width(), 85);
        let f = FeatureMap::zeros(ENCODER_CHANNELS, 32, 32, 4);
        let p = Point3::new(10.0, -30.0, 600.0);
        let out = model
            .forward_field(&f, p, &QueryContext::default())
            .unwrap();
        assert_eq!(out.v.len(), 21);
        for entry in &out.v {
            assert!(entry.w > 0.0 && entry.w < 1.0);
            let n = entry.d.norm();
            assert!(n == 0.0 || (n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn field_depends_only_on_feature_and_depth() {
        // Two distinct points whose projections both fall past the top-left
        // image corner clamp to cell (0,0) with exact weights (1,0,0,0), so
        // they present bit-identical (feature, depth) inputs; the outputs
        // must then be bit-identical too, whatever the map contains.
        let model = field_model(false);
        let mut f = FeatureMap::zeros(ENCODER_CHANNELS, 32, 32, 4);
        let mut rng = seeded_rng(9);
        for v in &mut f.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        let ctx = QueryContext::default();
        let a = model
            .forward_field(&f, Point3::new(-300.0, -320.0, 612.0), &ctx)
            .unwrap();
        let b = model
            .forward_field(&f, Point3::new(-400.0, -350.0, 612.0), &ctx)
            .unwrap();
        assert_eq!(a, b);

        // In-image points at one depth on a constant map: the sampled
        // features agree up to bilinear rounding, so outputs track closely.
        let mut f = FeatureMap::zeros(ENCODER_CHANNELS, 32, 32, 4);
        let fill: Vec<f64> = (0..ENCODER_CHANNELS).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let plane = 32 * 32;
        for c in 0..ENCODER_CHANNELS {
            for i in 0..plane {
                f.data[c * plane + i] = fill[c];
            }
        }
        let a = model
            .forward_field(&f, Point3::new(-40.0, 25.0, 612.0), &ctx)
            .unwrap();
        let b = model
            .forward_field(&f, Point3::new(55.0, -10.0, 612.0), &ctx)
            .unwrap();
        assert!((a.s - b.s).abs() < 1e-9);
        for (x, y) in a.v.iter().zip(&b.v) {
            assert!((x.w - y.w).abs() < 1e-9);
            assert!(x.d.dist(y.d) < 1e-9);
        }
    }

    #[test]
    fn scale_conditioning_requires_and_uses_the_scale() {
        let model = field_model(true);
        assert_eq!(model.cfg.input_width(), 34);
        let f = FeatureMap::zeros(ENCODER_CHANNELS, 32, 32, 4);
        let p = Point3::new(0.0, 0.0, 500.0);
        assert!(matches!(
            model.forward_field(&f, p, &QueryContext::default()),
            Err(Error::Config(_))
        ));
        let small = model
            .forward_field(
                &f,
                p,
                &QueryContext {
                    root: None,
                    hand_scale: Some(30.0),
                },
            )
            .unwrap();
        let large = model
            .forward_field(
                &f,
                p,
                &QueryContext {
                    root: None,
                    hand_scale: Some(60.0),
                },
            )
            .unwrap();
        assert_ne!(small, large);
    }

    #[test]
    fn holistic_arity_and_pooling_identity() {
        let model = Model::<f64>::new(ModelConfig::new(ModelKind::Holistic, Space::Camera), 3);
        assert_eq!(model.cfg.output_width(), 63);
        // Pooling a constant map returns that constant vector.
        let mut f = FeatureMap::zeros(ENCODER_CHANNELS, 5, 7, 4);
        for c in 0..ENCODER_CHANNELS {
            for i in 0..35 {
                f.data[c * 35 + i] = c as f64 * 0.25 - 1.0;
            }
        }
        let pooled = pool_mean(&f);
        for c in 0..ENCODER_CHANNELS {
            assert!((pooled[c] - (c as f64 * 0.25 - 1.0)).abs() < 1e-12);
        }
        let joints = model.forward_holistic(&f);
        assert_eq!(joints.len(), 21);
    }

    #[test]
    fn coordinate_head_is_anchored() {
        // Zero raw output lands exactly on the anchor; the spread of an O(1)
        // raw output covers the working volume.
        let anchor = Point3::new(5.0, -3.0, 650.0);
        let raw = vec![0.0; 9];
        let joints = coordinate_head(&raw, anchor, 3);
        for j in &joints.joints {
            assert_eq!(*j, anchor);
        }
        let raw = vec![0.5; 3];
        let j = coordinate_head(&raw, anchor, 1).joints[0];
        assert_eq!(j, anchor + Vec3::splat(150.0));
    }

    #[test]
    fn dense_head_shapes_and_ranges() {
        let model = Model::<f64>::new(ModelConfig::new(ModelKind::Dense2d, Space::Camera), 4);
        assert_eq!(model.cfg.output_width(), 85);
        let mut f = FeatureMap::zeros(ENCODER_CHANNELS, 4, 4, 4);
        let mut rng = seeded_rng(11);
        for v in &mut f.data {
            *v = rng.gen_range(-1.0..1.0);
        }
        let dense = model.forward_dense2d(&f);
        assert_eq!(dense.cells.len(), 16);
        for cell in &dense.cells {
            assert!(cell.e > 0.0 && cell.e < 1.0);
            assert_eq!(cell.w.len(), 21);
            assert_eq!(cell.j.len(), 21);
            for &w in &cell.w {
                assert!(w > 0.0 && w < 1.0);
            }
        }
    }

    #[test]
    fn head_backwards_match_finite_differences() {
        let mut rng = seeded_rng(13);
        let t = 3;
        let mut raw: Vec<f64> = (0..1 + 4 * t).map(|_| rng.gen_range(-1.0..1.0)).collect();
        // Random cotangent for the sample fields.
        let d_sample = FieldSample {
            s: rng.gen_range(-1.0..1.0f64),
            v: (0..t)
                .map(|_| OffsetVector4 {
                    w: rng.gen_range(-1.0..1.0),
                    d: Vec3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    ),
                })
                .collect(),
        };
        let objective = |raw: &[f64]| -> f64 {
            let s = field_head(raw, t);
            let mut acc = s.s * d_sample.s;
            for (o, g) in s.v.iter().zip(&d_sample.v) {
                acc += o.w * g.w + o.d.dot(g.d);
            }
            acc
        };
        let d_raw = field_head_backward(&raw, &d_sample);
        let h = 1e-6;
        for i in 0..raw.len() {
            let orig = raw[i];
            raw[i] = orig + h;
            let fp = objective(&raw);
            raw[i] = orig - h;
            let fm = objective(&raw);
            raw[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            assert!(
                (d_raw[i] - fd).abs() / d_raw[i].abs().max(fd.abs()).max(1e-6) < 1e-6,
                "entry {i}: {} vs {}",
                d_raw[i],
                fd
            );
        }
    }

    #[test]
    fn zero_direction_raw_gets_zero_output_and_gradient() {
        let t = 1;
        let raw = vec![0.3, 0.2, 0.0, 0.0, 0.0];
        let s = field_head::<f64>(&raw, t);
        assert_eq!(s.v[0].d, Vec3::zero());
        let d_sample = FieldSample {
            s: 1.0,
            v: vec![OffsetVector4 {
                w: 1.0,
                d: Vec3::splat(1.0),
            }],
        };
        let d_raw = field_head_backward(&raw, &d_sample);
        assert_eq!(&d_raw[2..], &[0.0, 0.0, 0.0]);
    }
}
