//! Full-scene inference for the three model kinds.
//!
//! The field model follows the voting pipeline: encode once, run the
//! decoder over a voxel-center grid, gate voters by predicted signed
//! distance, and aggregate weighted votes per joint. Baselines decode the
//! feature map directly. All entry points return joints in the model's
//! output space (camera frame, or root-relative when so configured) and
//! fall back to the configured anchor for joints without voters.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::marching_cubes::ScalarGrid;
use crate::math::{CompensatedSum, CompensatedSum3, Point3};
use crate::nn::layers::FeatureMap;
use crate::nn::model::{Model, ModelKind, QueryContext};
use crate::pose_field::{cast_votes, FieldSample, JointSet, Space, VotingParams};
use crate::render::RenderedImage;
use crate::sampling::{sample_inference_grid, GridSampleSpec, SampleRegion};
use crate::scalar::{rl, Real};

/// One scene's predicted pose plus voting diagnostics.
#[derive(Debug, Clone)]
pub struct InferenceResult<S> {
    /// Predicted joints in the model's output space.
    pub joints: JointSet<S>,
    /// Joints that had no valid voters and were replaced by the anchor.
    pub invalid: Vec<usize>,
    /// Query points (or feature cells) the decoder evaluated.
    pub n_points: usize,
    /// Points gated in as voters (or cells classified foreground).
    pub n_valid: usize,
}

/// Inference region for the configured space: the camera frustum, or the
/// root-centered cube (which needs the root estimate from the context).
pub fn inference_region<S: Real>(
    model: &Model<S>,
    ctx: &QueryContext<S>,
) -> Result<SampleRegion<S>> {
    match model.cfg.space {
        Space::Camera => Ok(SampleRegion::CameraFrustum(model.cfg.frustum)),
        Space::RootRelative => Ok(SampleRegion::RootCube {
            center: ctx.root.ok_or_else(|| {
                Error::Config("root-relative inference needs a root estimate".into())
            })?,
            half_extent: model.cfg.root_half_extent,
        }),
    }
}

/// Runs the field decoder over a batch of camera-frame points.
pub fn forward_points<S: Real>(
    model: &Model<S>,
    f: &FeatureMap<S>,
    points: &[Point3<S>],
    ctx: &QueryContext<S>,
) -> Result<Vec<FieldSample<S>>> {
    points
        .par_iter()
        .map(|&p| model.forward_field(f, p, ctx))
        .collect()
}

/// Field-model inference at the configured voting parameters.
pub fn infer_field<S: Real>(
    model: &Model<S>,
    image: &RenderedImage,
    step: S,
    ctx: &QueryContext<S>,
) -> Result<InferenceResult<S>> {
    infer_field_with(model, image, step, ctx, &model.cfg.voting)
}

/// Field-model inference with explicit voting parameters (ablation entry).
pub fn infer_field_with<S: Real>(
    model: &Model<S>,
    image: &RenderedImage,
    step: S,
    ctx: &QueryContext<S>,
    voting: &VotingParams<S>,
) -> Result<InferenceResult<S>> {
    let region = inference_region(model, ctx)?;
    let grid = sample_inference_grid(&GridSampleSpec { step, region })?;
    let f = model.encode(image)?;
    let preds = forward_points(model, &f, &grid, ctx)?;
    let n_valid = preds
        .iter()
        .filter(|p| p.s.abs() < voting.delta)
        .count();

    let anchor = model.cfg.anchor();
    let offset = match model.cfg.space {
        Space::Camera => Point3::zero(),
        // Votes aggregate in the camera frame; the output space is rooted.
        Space::RootRelative => ctx.root.expect("checked by inference_region"),
    };
    let mut joints = Vec::with_capacity(model.cfg.joint_count);
    let mut invalid = Vec::new();
    for (t, vote) in cast_votes(&grid, &preds, voting).into_iter().enumerate() {
        match vote {
            Ok(p) => joints.push(p - offset),
            Err(Error::NoValidVoters { .. }) => {
                joints.push(anchor);
                invalid.push(t);
            }
            Err(other) => return Err(other),
        }
    }
    Ok(InferenceResult {
        joints: JointSet::new(joints),
        invalid,
        n_points: grid.len(),
        n_valid,
    })
}

/// Holistic baseline: one decoder pass over the pooled feature map.
pub fn infer_holistic<S: Real>(
    model: &Model<S>,
    image: &RenderedImage,
) -> Result<InferenceResult<S>> {
    let f = model.encode(image)?;
    let cells = f.height * f.width;
    Ok(InferenceResult {
        joints: model.forward_holistic(&f),
        invalid: Vec::new(),
        n_points: cells,
        n_valid: cells,
    })
}

/// Dense baseline: weighted average of per-cell joint predictions over the
/// cells classified foreground.
pub fn infer_dense2d<S: Real>(
    model: &Model<S>,
    image: &RenderedImage,
) -> Result<InferenceResult<S>> {
    let f = model.encode(image)?;
    let dense = model.forward_dense2d(&f);
    let half = rl::<S>(0.5);
    let fg: Vec<usize> = (0..dense.cells.len())
        .filter(|&i| dense.cells[i].e > half)
        .collect();

    let anchor = model.cfg.anchor();
    let mut joints = Vec::with_capacity(model.cfg.joint_count);
    let mut invalid = Vec::new();
    for t in 0..model.cfg.joint_count {
        let mut w_sum = CompensatedSum::new();
        let mut acc = CompensatedSum3::new();
        for &i in &fg {
            let w = dense.cells[i].w[t];
            w_sum.add(w);
            acc.add(dense.cells[i].j[t] * w);
        }
        let total = w_sum.value();
        if fg.is_empty() || !(total > S::zero()) {
            joints.push(anchor);
            invalid.push(t);
        } else {
            joints.push(acc.value() / total);
        }
    }
    Ok(InferenceResult {
        joints: JointSet::new(joints),
        invalid,
        n_points: dense.cells.len(),
        n_valid: fg.len(),
    })
}

/// Dispatches on the model kind. `step` only applies to the field model.
pub fn infer<S: Real>(
    model: &Model<S>,
    image: &RenderedImage,
    step: S,
    ctx: &QueryContext<S>,
) -> Result<InferenceResult<S>> {
    match model.cfg.kind {
        ModelKind::Field => infer_field(model, image, step, ctx),
        ModelKind::Holistic => infer_holistic(model, image),
        ModelKind::Dense2d => infer_dense2d(model, image),
    }
}

/// Evaluates the predicted signed distance on a regular lattice covering the
/// inference region, ready for iso-surface extraction.
pub fn predict_sdf_grid<S: Real>(
    model: &Model<S>,
    image: &RenderedImage,
    ctx: &QueryContext<S>,
    pitch: S,
) -> Result<ScalarGrid<S>> {
    if !(pitch > S::zero()) {
        return Err(Error::Config(format!("grid pitch must be positive, got {pitch}")));
    }
    let region = inference_region(model, ctx)?;
    let (lo, hi) = region.aabb();
    let extent = hi - lo;
    let dims = [
        (extent.x / pitch).to_f64().ceil() as usize + 1,
        (extent.y / pitch).to_f64().ceil() as usize + 1,
        (extent.z / pitch).to_f64().ceil() as usize + 1,
    ];
    let f = model.encode(image)?;
    let points: Vec<Point3<S>> = (0..dims[2])
        .flat_map(|iz| {
            let z = lo.z + pitch * rl(iz as f64);
            (0..dims[1]).flat_map(move |iy| {
                let y = lo.y + pitch * rl(iy as f64);
                (0..dims[0]).map(move |ix| Point3::new(lo.x + pitch * rl(ix as f64), y, z))
            })
        })
        .collect();
    let values = forward_points(model, &f, &points, ctx)?
        .into_iter()
        .map(|s| s.s)
        .collect();
    ScalarGrid::new(lo, pitch, dims, values)
}
