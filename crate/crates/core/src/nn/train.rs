//! Training: per-scene loss gradients for the three models and the step
//! loop that fits them with seeded RMSProp updates.
//!
//! Each step draws a batch of scenes, samples fresh query points (field
//! model), differentiates the batch-mean loss through decoder and encoder,
//! and applies one optimizer update. Everything is sequential and seeded,
//! so a fixed seed reproduces the loss curve bit for bit.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hand::WRIST;
use crate::math::Point3;
use crate::nn::layers::FeatureMap;
use crate::nn::loss::{
    dense_loss_grad, field_loss_grad, holistic_loss_grad, DenseLoss, DenseTargets, LossReport,
};
use crate::nn::model::{
    coordinate_head, coordinate_head_backward, dense_head, dense_head_backward, field_head,
    field_head_backward, pool_mean, pool_mean_backward, scatter_field_input_grad, DenseCell,
    Model, ModelConfig, ModelKind, QueryContext,
};
use crate::nn::params::{scheduled_lr, seeded_rng, RmsProp};
use crate::pose_field::{build_targets, FieldSample, FieldTargets, JointSet, Space};
use crate::render::RenderedImage;
use crate::sampling::{sample_training_points, SampleRegion, TrainSampleSpec};
use crate::scalar::{rl, Real};
use crate::scene::SceneRecord;
use crate::sdf::MeshSdf;
use crate::bvh::TriBvh;
use crate::nn::encoder::ENCODER_CHANNELS;

/// Step-loop settings. The per-scene point counts are deliberately far
/// below the sampling module's standalone defaults: points are redrawn
/// every step, so coverage accumulates across the run.
#[derive(Debug, Clone, Copy)]
pub struct TrainConfig<S> {
    pub steps: usize,
    pub batch_scenes: usize,
    pub lr: S,
    pub seed: u64,
    pub sample: TrainSampleSpec<S>,
    /// Emit a log line every this many steps (0 = never).
    pub log_every: usize,
}

impl<S: Real> Default for TrainConfig<S> {
    fn default() -> Self {
        Self {
            steps: 800,
            batch_scenes: 2,
            lr: rl(1e-4),
            seed: 0,
            sample: per_step_sample_spec(),
            log_every: 0,
        }
    }
}

/// Per-step sampling quotas: 384 inside + 384 outside per scene from a pool
/// of 2000 noisy surface points plus 800 uniform fillers.
pub fn per_step_sample_spec<S: Real>() -> TrainSampleSpec<S> {
    TrainSampleSpec {
        n_near_surface: 2000,
        surface_noise_sigma: rl(10.0),
        n_bounding_sphere: 400,
        n_region: 400,
        n_inside: 384,
        n_outside: 384,
        rng_seed: 0,
    }
}

/// A scene with everything training needs precomputed: the distance field,
/// ground truth in both spaces, the sampling region, the per-scene decoder
/// context, and (for the dense baseline) the per-cell targets.
pub struct PreparedScene<S> {
    pub image: RenderedImage,
    pub sdf: MeshSdf<S>,
    /// Camera-space ground-truth joints (field targets live here).
    pub joints_camera: JointSet<S>,
    /// Ground truth in the model's output space (root-relative mode
    /// subtracts the wrist).
    pub joints_in_space: JointSet<S>,
    pub region: SampleRegion<S>,
    pub ctx: QueryContext<S>,
    pub dense: Option<DenseTargets<S>>,
    pub hand_scale: S,
}

/// Precomputes one scene for a model configuration. Dense targets are only
/// built for the dense baseline (they need a full ray sweep).
pub fn prepare_scene<S: Real>(
    record: &SceneRecord<S>,
    cfg: &ModelConfig<S>,
) -> Result<PreparedScene<S>> {
    let sdf = MeshSdf::new(record.mesh.clone())?;
    let root = record.joints.joints[WRIST];
    let region = match cfg.space {
        Space::Camera => SampleRegion::CameraFrustum(cfg.frustum),
        Space::RootRelative => SampleRegion::RootCube {
            center: root,
            half_extent: cfg.root_half_extent,
        },
    };
    let ctx = QueryContext {
        root: match cfg.space {
            Space::Camera => None,
            Space::RootRelative => Some(root),
        },
        hand_scale: Some(record.hand_scale),
    };
    let joints_in_space = match cfg.space {
        Space::Camera => record.joints.clone(),
        Space::RootRelative => record.joints.root_relative(),
    };
    let dense = match cfg.kind {
        ModelKind::Dense2d => Some(build_dense_targets(record, cfg, &joints_in_space)?),
        _ => None,
    };
    Ok(PreparedScene {
        image: record.image.clone(),
        sdf,
        joints_camera: record.joints.clone(),
        joints_in_space,
        region,
        ctx,
        dense,
        hand_scale: record.hand_scale,
    })
}

/// Dense-baseline ground truth. Cell (x, y) of the stride-4 feature grid is
/// identified with pixel (4x + 2, 4y + 2): its foreground bit comes from
/// the mask there, and for foreground cells the per-joint vote weights are
/// evaluated at the first mesh intersection of that pixel's center ray
/// (the exact ray the renderer used, so a set mask bit guarantees a hit).
pub fn build_dense_targets<S: Real>(
    record: &SceneRecord<S>,
    cfg: &ModelConfig<S>,
    joints_in_space: &JointSet<S>,
) -> Result<DenseTargets<S>> {
    let bvh = TriBvh::build(&record.mesh);
    let cam = &record.cam;
    let stride = crate::nn::encoder::ENCODER_STRIDE;
    let (gw, gh) = (
        record.image.width as usize / stride,
        record.image.height as usize / stride,
    );
    let mut e = Vec::with_capacity(gw * gh);
    let mut w = Vec::with_capacity(gw * gh);
    for gy in 0..gh {
        for gx in 0..gw {
            let (pu, pv) = ((stride * gx + 2) as u32, (stride * gy + 2) as u32);
            if !record.mask.get(pu, pv) {
                e.push(false);
                w.push(None);
                continue;
            }
            let dir = crate::math::Vec3::new(
                (rl::<S>(pu as f64) + rl(0.5) - cam.cx) / cam.fx,
                (rl::<S>(pv as f64) + rl(0.5) - cam.cy) / cam.fy,
                S::one(),
            )
            .normalized_or_zero(rl(1e-12));
            let hit = bvh.first_hit(Point3::zero(), dir, rl(1e-6)).ok_or_else(|| {
                Error::Dataset(format!(
                    "mask bit set at pixel ({pu}, {pv}) but its ray misses the mesh"
                ))
            })?;
            let p = Point3::zero() + dir * hit.t;
            // Vote weight per joint at the surface point (camera frame).
            let weights = record
                .joints
                .joints
                .iter()
                .map(|&j| (S::one() - j.dist(p) / cfg.voting.r).max(S::zero()))
                .collect();
            e.push(true);
            w.push(Some(weights));
        }
    }
    Ok(DenseTargets {
        e,
        w,
        joints: joints_in_space.clone(),
    })
}

/// Field-model loss of one scene, forward only.
pub fn field_scene_loss<S: Real>(
    model: &Model<S>,
    image: &RenderedImage,
    points: &[Point3<S>],
    ctx: &QueryContext<S>,
    targets: &[FieldTargets<S>],
) -> Result<LossReport<S>> {
    let f = model.encode(image)?;
    let preds: Result<Vec<FieldSample<S>>> = points
        .iter()
        .map(|&p| model.forward_field(&f, p, ctx))
        .collect();
    let (report, _) =
        field_loss_grad(&preds?, targets, model.cfg.voting.delta, model.cfg.lambda)?;
    Ok(report)
}

/// Field-model loss of one scene plus parameter gradients, accumulated
/// into `grads`.
pub fn field_scene_grad<S: Real>(
    model: &Model<S>,
    image: &RenderedImage,
    points: &[Point3<S>],
    ctx: &QueryContext<S>,
    targets: &[FieldTargets<S>],
    grads: &mut [S],
) -> Result<LossReport<S>> {
    let (f, enc_tape) = model.encode_tracked(image)?;
    let mut preds = Vec::with_capacity(points.len());
    let mut tapes = Vec::with_capacity(points.len());
    for &p in points {
        let (input, tap) = model.field_input(&f, p, ctx)?;
        let (raw, tape) = model.mlp.forward_tracked(&model.params, &input);
        preds.push(field_head(&raw, model.cfg.joint_count));
        tapes.push((raw, tap, tape));
    }
    let (report, d_preds) =
        field_loss_grad(&preds, targets, model.cfg.voting.delta, model.cfg.lambda)?;
    let mut d_f = FeatureMap::zeros(f.channels, f.height, f.width, f.stride);
    for ((raw, tap, tape), d_pred) in tapes.iter().zip(&d_preds) {
        let d_raw = field_head_backward(raw, d_pred);
        let d_input = model.mlp.backward(&model.params, tape, &d_raw, grads);
        scatter_field_input_grad(&d_input, tap, &mut d_f);
    }
    model.encoder.backward(&model.params, &enc_tape, d_f, grads);
    Ok(report)
}

/// Holistic loss of one scene, forward only.
pub fn holistic_scene_loss<S: Real>(
    model: &Model<S>,
    image: &RenderedImage,
    gt: &JointSet<S>,
) -> Result<S> {
    let f = model.encode(image)?;
    let pred = model.forward_holistic(&f);
    Ok(holistic_loss_grad(&pred, gt)?.0)
}

/// Holistic loss of one scene plus parameter gradients.
pub fn holistic_scene_grad<S: Real>(
    model: &Model<S>,
    image: &RenderedImage,
    gt: &JointSet<S>,
    grads: &mut [S],
) -> Result<S> {
    let (f, enc_tape) = model.encode_tracked(image)?;
    let pooled = pool_mean(&f);
    let (raw, tape) = model.mlp.forward_tracked(&model.params, &pooled);
    let pred = coordinate_head(&raw, model.cfg.anchor(), model.cfg.joint_count);
    let (loss, d_joints) = holistic_loss_grad(&pred, gt)?;
    let d_raw = coordinate_head_backward(&d_joints);
    let d_pooled = model.mlp.backward(&model.params, &tape, &d_raw, grads);
    let mut d_f = FeatureMap::zeros(f.channels, f.height, f.width, f.stride);
    pool_mean_backward(&d_pooled, &mut d_f);
    model.encoder.backward(&model.params, &enc_tape, d_f, grads);
    Ok(loss)
}

/// Dense-baseline loss of one scene, forward only.
pub fn dense_scene_loss<S: Real>(
    model: &Model<S>,
    image: &RenderedImage,
    targets: &DenseTargets<S>,
) -> Result<DenseLoss<S>> {
    let f = model.encode(image)?;
    let dense = model.forward_dense2d(&f);
    Ok(dense_loss_grad(&dense.cells, targets, model.cfg.lambda_dense)?.0)
}

/// Dense-baseline loss of one scene plus parameter gradients.
pub fn dense_scene_grad<S: Real>(
    model: &Model<S>,
    image: &RenderedImage,
    targets: &DenseTargets<S>,
    grads: &mut [S],
) -> Result<DenseLoss<S>> {
    let (f, enc_tape) = model.encode_tracked(image)?;
    let plane = f.height * f.width;
    let mut cells: Vec<DenseCell<S>> = Vec::with_capacity(plane);
    let mut tapes = Vec::with_capacity(plane);
    let mut input = vec![S::zero(); ENCODER_CHANNELS];
    for i in 0..plane {
        for c in 0..ENCODER_CHANNELS {
            input[c] = f.data[c * plane + i];
        }
        let (raw, tape) = model.mlp.forward_tracked(&model.params, &input);
        cells.push(dense_head(&raw, model.cfg.anchor(), model.cfg.joint_count));
        tapes.push((raw, tape));
    }
    let (loss, d_cells) = dense_loss_grad(&cells, targets, model.cfg.lambda_dense)?;
    let mut d_f = FeatureMap::zeros(f.channels, f.height, f.width, f.stride);
    for (i, ((raw, tape), d_cell)) in tapes.iter().zip(&d_cells).enumerate() {
        let d_raw = dense_head_backward(raw, d_cell.e, &d_cell.w, &d_cell.j);
        let d_input = model.mlp.backward(&model.params, tape, &d_raw, grads);
        for c in 0..ENCODER_CHANNELS {
            d_f.data[c * plane + i] += d_input[c];
        }
    }
    model.encoder.backward(&model.params, &enc_tape, d_f, grads);
    Ok(loss)
}

/// One scene's loss + gradient for whatever kind the model is. The field
/// model draws fresh query points with the given sampling seed.
fn scene_grad<S: Real>(
    model: &Model<S>,
    scene: &PreparedScene<S>,
    sample: &TrainSampleSpec<S>,
    sample_seed: u64,
    grads: &mut [S],
) -> Result<S> {
    match model.cfg.kind {
        ModelKind::Field => {
            let mut spec = *sample;
            spec.rng_seed = sample_seed;
            let points = sample_training_points(&scene.sdf, &scene.region, &spec)?;
            let targets =
                build_targets(&points, &scene.joints_camera, &scene.sdf, &model.cfg.voting);
            let report =
                field_scene_grad(model, &scene.image, &points, &scene.ctx, &targets, grads)?;
            Ok(report.total)
        }
        ModelKind::Holistic => {
            holistic_scene_grad(model, &scene.image, &scene.joints_in_space, grads)
        }
        ModelKind::Dense2d => {
            let targets = scene
                .dense
                .as_ref()
                .expect("dense targets are built for dense models in prepare_scene");
            Ok(dense_scene_grad(model, &scene.image, targets, grads)?.total)
        }
    }
}

/// Deterministic per-(step, slot) sampling seed (splitmix64 of the packed
/// coordinates).
fn mix_seed(seed: u64, step: usize, slot: usize) -> u64 {
    let mut z = seed
        .wrapping_add((step as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add((slot as u64 + 1).wrapping_mul(0xBF58_476D_1CE4_E5B9));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Fits the model in place. Returns the per-step batch-mean loss curve.
pub fn train<S: Real>(
    model: &mut Model<S>,
    scenes: &[SceneRecord<S>],
    cfg: &TrainConfig<S>,
) -> Result<Vec<S>> {
    if scenes.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let prepared: Vec<PreparedScene<S>> = scenes
        .iter()
        .map(|s| prepare_scene(s, &model.cfg))
        .collect::<Result<_>>()?;
    let mut opt = RmsProp::new(model.layout.total());
    let mut grads = vec![S::zero(); model.layout.total()];
    let mut batch_rng = seeded_rng(cfg.seed);
    let mut curve = Vec::with_capacity(cfg.steps);
    let inv_b = rl::<S>(1.0 / cfg.batch_scenes.max(1) as f64);
    for step in 0..cfg.steps {
        let lr = scheduled_lr(cfg.lr, step, cfg.steps);
        for g in &mut grads {
            *g = S::zero();
        }
        let mut loss_acc = S::zero();
        for slot in 0..cfg.batch_scenes {
            let idx = batch_rng.gen_range(0..prepared.len());
            loss_acc += scene_grad(
                model,
                &prepared[idx],
                &cfg.sample,
                mix_seed(cfg.seed, step, slot),
                &mut grads,
            )?;
        }
        let loss = loss_acc * inv_b;
        if !loss.is_finite() {
            let grad_norm = grads
                .iter()
                .map(|&g| g.to_f64() * g.to_f64())
                .sum::<f64>()
                .sqrt();
            return Err(Error::TrainingDiverged {
                step,
                lr: lr.to_f64(),
                grad_norm,
            });
        }
        for g in &mut grads {
            *g *= inv_b;
        }
        opt.step(&mut model.params, &grads, lr);
        curve.push(loss);
        if cfg.log_every > 0 && (step % cfg.log_every == 0 || step + 1 == cfg.steps) {
            log::info!(
                "step {step}/{}: loss {:.6} (lr {:.2e})",
                cfg.steps,
                loss.to_f64(),
                lr.to_f64()
            );
        }
    }
    Ok(curve)
}
