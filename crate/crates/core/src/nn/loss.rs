//! Training losses for the three models, each with its analytic gradient
//! with respect to the predictions.
//!
//! Conventions: Huber transition point 1.0 (targets are O(1): weights are
//! dimensionless in [0,1], directions unit); binary cross-entropy logs are
//! stabilized with 1e-12; the field loss gates its offset term on the
//! ground-truth signed distance (the indicator is part of the target, not
//! of the prediction).

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::nn::model::DenseCell;
use crate::pose_field::{FieldSample, FieldTargets, JointSet, OffsetVector4};
use crate::scalar::{rl, Real};

/// Huber transition point.
pub const HUBER_DELTA: f64 = 1.0;
/// Log stabilizer inside binary cross-entropy.
pub const BCE_EPS: f64 = 1e-12;

/// Huber penalty of one residual: quadratic within the transition point c,
/// linear beyond (0.5 x^2 for |x| <= c, else c(|x| - 0.5c)).
#[inline]
pub fn huber<S: Real>(x: S) -> S {
    let c = rl::<S>(HUBER_DELTA);
    let a = x.abs();
    if a <= c {
        rl::<S>(0.5) * x * x
    } else {
        c * (a - rl::<S>(0.5) * c)
    }
}

/// Derivative of [`huber`]: x inside the quadratic region, +-c outside.
#[inline]
pub fn huber_grad<S: Real>(x: S) -> S {
    let c = rl::<S>(HUBER_DELTA);
    if x.abs() <= c {
        x
    } else {
        c * x.signum()
    }
}

#[inline]
fn clamp_sdf<S: Real>(s: S, delta: S) -> S {
    s.max(-delta).min(delta)
}

/// Field-loss breakdown for one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossReport<S> {
    /// Clamped signed-distance term.
    pub l_s: S,
    /// Gated offset term.
    pub l_v: S,
    /// l_s + lambda * l_v, exactly.
    pub total: S,
    pub lambda: S,
    /// Points whose ground-truth |s| < delta (the gated-in count).
    pub n_near_surface: usize,
}

/// Clamped SDF loss: mean |clamp(pred, delta) - clamp(true, delta)|.
pub fn loss_sdf<S: Real>(pred_s: &[S], true_s: &[S], delta: S) -> Result<S> {
    Ok(loss_sdf_grad(pred_s, true_s, delta)?.0)
}

/// [`loss_sdf`] plus its gradient with respect to each prediction.
pub fn loss_sdf_grad<S: Real>(pred_s: &[S], true_s: &[S], delta: S) -> Result<(S, Vec<S>)> {
    debug_assert_eq!(pred_s.len(), true_s.len());
    if pred_s.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let inv_n = rl::<S>(1.0 / pred_s.len() as f64);
    let mut acc = S::zero();
    let mut grads = vec![S::zero(); pred_s.len()];
    for i in 0..pred_s.len() {
        let diff = clamp_sdf(pred_s[i], delta) - clamp_sdf(true_s[i], delta);
        acc += diff.abs();
        // d|clamp(p) - clamp(t)|/dp: sign of the difference while p is
        // inside the clamp window, zero once the clamp saturates.
        if pred_s[i].abs() < delta && diff != S::zero() {
            grads[i] = diff.signum() * inv_n;
        }
    }
    Ok((acc * inv_n, grads))
}

/// Gated offset loss: (1/N) * sum over points of 1(|s_true| < delta) times
/// the Huber penalty summed over all 4T (weight, direction) entries of that
/// point. The average runs over all N points, gated-out points contributing
/// zero. Empty batches yield zero.
pub fn loss_offsets<S: Real>(
    preds: &[FieldSample<S>],
    targets: &[FieldTargets<S>],
    delta: S,
) -> S {
    loss_offsets_grad(preds, targets, delta).0
}

/// [`loss_offsets`] plus its gradient with respect to each predicted entry,
/// returned in [`FieldSample`] layout (the `s` slots stay zero: the gate
/// reads ground truth only).
pub fn loss_offsets_grad<S: Real>(
    preds: &[FieldSample<S>],
    targets: &[FieldTargets<S>],
    delta: S,
) -> (S, Vec<FieldSample<S>>) {
    debug_assert_eq!(preds.len(), targets.len());
    let n = preds.len();
    let mut grads: Vec<FieldSample<S>> = preds
        .iter()
        .map(|p| FieldSample {
            s: S::zero(),
            v: vec![OffsetVector4::zero(); p.v.len()],
        })
        .collect();
    if n == 0 {
        return (S::zero(), grads);
    }
    let inv_n = rl::<S>(1.0 / n as f64);
    let mut acc = S::zero();
    for i in 0..n {
        if targets[i].s.abs() >= delta {
            continue;
        }
        debug_assert_eq!(preds[i].v.len(), targets[i].v.len());
        for (t, (p, g)) in preds[i].v.iter().zip(&targets[i].v).enumerate() {
            acc += huber(p.w - g.w);
            grads[i].v[t].w = huber_grad(p.w - g.w) * inv_n;
            let d_err = p.d - g.d;
            acc += huber(d_err.x) + huber(d_err.y) + huber(d_err.z);
            grads[i].v[t].d = Vec3::new(
                huber_grad(d_err.x) * inv_n,
                huber_grad(d_err.y) * inv_n,
                huber_grad(d_err.z) * inv_n,
            );
        }
    }
    (acc * inv_n, grads)
}

/// Combined field loss total = L_s + lambda * L_V, with the gradient with
/// respect to every predicted field value.
pub fn field_loss_grad<S: Real>(
    preds: &[FieldSample<S>],
    targets: &[FieldTargets<S>],
    delta: S,
    lambda: S,
) -> Result<(LossReport<S>, Vec<FieldSample<S>>)> {
    let pred_s: Vec<S> = preds.iter().map(|p| p.s).collect();
    let true_s: Vec<S> = targets.iter().map(|t| t.s).collect();
    let (l_s, d_s) = loss_sdf_grad(&pred_s, &true_s, delta)?;
    let (l_v, mut grads) = loss_offsets_grad(preds, targets, delta);
    for (g, ds) in grads.iter_mut().zip(d_s) {
        g.s = ds;
        for entry in &mut g.v {
            entry.w *= lambda;
            entry.d = entry.d.scale(lambda);
        }
    }
    let n_near_surface = targets.iter().filter(|t| t.s.abs() < delta).count();
    Ok((
        LossReport {
            l_s,
            l_v,
            total: l_s + lambda * l_v,
            lambda,
            n_near_surface,
        },
        grads,
    ))
}

/// Holistic baseline loss: Huber over every coordinate of every joint,
/// averaged over all 3T entries. Returns the per-joint gradients.
pub fn holistic_loss_grad<S: Real>(
    pred: &JointSet<S>,
    gt: &JointSet<S>,
) -> Result<(S, Vec<Vec3<S>>)> {
    if pred.len() != gt.len() {
        return Err(Error::ShapeError(format!(
            "predicted {} joints, ground truth has {}",
            pred.len(),
            gt.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let inv = rl::<S>(1.0 / (3 * pred.len()) as f64);
    let mut acc = S::zero();
    let mut grads = Vec::with_capacity(pred.len());
    for (p, g) in pred.joints.iter().zip(&gt.joints) {
        let e = *p - *g;
        acc += huber(e.x) + huber(e.y) + huber(e.z);
        grads.push(Vec3::new(
            huber_grad(e.x) * inv,
            huber_grad(e.y) * inv,
            huber_grad(e.z) * inv,
        ));
    }
    Ok((acc * inv, grads))
}

/// Per-cell ground truth for the dense baseline: the foreground bit from
/// the rendered mask, and for foreground cells the per-joint vote weights
/// computed at the cell ray's first mesh intersection. The position target
/// of every foreground cell is the ground-truth joint set itself.
#[derive(Debug, Clone)]
pub struct DenseTargets<S> {
    pub e: Vec<bool>,
    /// Per-joint weights for foreground cells, `None` for background.
    pub w: Vec<Option<Vec<S>>>,
    pub joints: JointSet<S>,
}

/// Dense baseline loss: (1/L) * [sum BCE(e_gt, e_pred) + lambda_dense *
/// sum over foreground cells of the Huber penalty over all (w, j) entries].
/// Returns the value, the BCE and vote components (both already divided by
/// L), and per-cell gradients in [`DenseCell`] layout.
pub struct DenseLoss<S> {
    pub total: S,
    pub bce: S,
    pub votes: S,
}

pub fn dense_loss_grad<S: Real>(
    preds: &[DenseCell<S>],
    targets: &DenseTargets<S>,
    lambda_dense: S,
) -> Result<(DenseLoss<S>, Vec<DenseCell<S>>)> {
    if preds.is_empty() {
        return Err(Error::EmptyBatch);
    }
    debug_assert_eq!(preds.len(), targets.e.len());
    let t = targets.joints.len();
    let inv_l = rl::<S>(1.0 / preds.len() as f64);
    let eps = rl::<S>(BCE_EPS);
    let one = S::one();
    let mut bce = S::zero();
    let mut votes = S::zero();
    let mut grads = Vec::with_capacity(preds.len());
    for (c, cell) in preds.iter().enumerate() {
        let mut g = DenseCell {
            e: S::zero(),
            w: vec![S::zero(); t],
            j: vec![Vec3::zero(); t],
        };
        let e_gt = targets.e[c];
        // BCE with stabilized logs; d/de = -[e_gt/(e+eps) - (1-e_gt)/(1-e+eps)].
        if e_gt {
            bce -= (cell.e + eps).ln();
            g.e = -(one / (cell.e + eps)) * inv_l;
        } else {
            bce -= (one - cell.e + eps).ln();
            g.e = (one / (one - cell.e + eps)) * inv_l;
        }
        if let Some(w_gt) = &targets.w[c] {
            let scale = lambda_dense * inv_l;
            for i in 0..t {
                let we = cell.w[i] - w_gt[i];
                votes += huber(we);
                g.w[i] = huber_grad(we) * scale;
                let je = cell.j[i] - targets.joints.joints[i];
                votes += huber(je.x) + huber(je.y) + huber(je.z);
                g.j[i] = Vec3::new(
                    huber_grad(je.x) * scale,
                    huber_grad(je.y) * scale,
                    huber_grad(je.z) * scale,
                );
            }
        }
        grads.push(g);
    }
    bce *= inv_l;
    votes *= inv_l;
    Ok((
        DenseLoss {
            total: bce + lambda_dense * votes,
            bce,
            votes,
        },
        grads,
    ))
}
