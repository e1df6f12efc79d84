//! Pose evaluation metrics: camera-space joint error, PCK area-under-curve,
//! centroid translation/depth errors, and root-aligned errors.

use crate::error::{Error, Result};
use crate::math::Vec3;
use crate::pose_field::JointSet;
use crate::scalar::{rl, Real};

/// AUC threshold sweep: 0 to 50 mm in 100 uniform steps.
pub const AUC_MAX_MM: f64 = 50.0;
pub const AUC_STEPS: usize = 100;

fn check_len<S: Real>(pred: &JointSet<S>, gt: &JointSet<S>) -> Result<()> {
    if pred.len() != gt.len() || pred.is_empty() {
        return Err(Error::ShapeError(format!(
            "joint count mismatch: {} vs {}",
            pred.len(),
            gt.len()
        )));
    }
    Ok(())
}

/// Per-joint Euclidean errors in mm, no alignment.
pub fn joint_errors<S: Real>(pred: &JointSet<S>, gt: &JointSet<S>) -> Result<Vec<S>> {
    check_len(pred, gt)?;
    Ok(pred
        .joints
        .iter()
        .zip(&gt.joints)
        .map(|(&p, &g)| p.dist(g))
        .collect())
}

/// Camera-space mean joint error: mean over joints of the Euclidean
/// distance, with no alignment of any kind.
pub fn cs_mje<S: Real>(pred: &JointSet<S>, gt: &JointSet<S>) -> Result<S> {
    let errs = joint_errors(pred, gt)?;
    let n = rl::<S>(errs.len() as f64);
    Ok(errs.into_iter().sum::<S>() / n)
}

/// Area under the PCK curve for thresholds 0..AUC_MAX_MM in AUC_STEPS
/// uniform steps, trapezoidal rule, normalized to [0, 1].
pub fn auc_pck<S: Real>(per_joint_errors: &[S]) -> Result<f64> {
    if per_joint_errors.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n = per_joint_errors.len() as f64;
    let pck = |tau: f64| -> f64 {
        per_joint_errors
            .iter()
            .filter(|&&e| e.to_f64() <= tau)
            .count() as f64
            / n
    };
    let mut acc = 0.0;
    for i in 0..AUC_STEPS {
        let t0 = AUC_MAX_MM * i as f64 / AUC_STEPS as f64;
        let t1 = AUC_MAX_MM * (i + 1) as f64 / AUC_STEPS as f64;
        acc += 0.5 * (pck(t0) + pck(t1)) * (t1 - t0);
    }
    Ok(acc / AUC_MAX_MM)
}

fn centroid<S: Real>(js: &JointSet<S>) -> Vec3<S> {
    let mut acc = Vec3::zero();
    for &j in &js.joints {
        acc = acc + j;
    }
    acc / rl(js.len() as f64)
}

/// Translation error (centroid distance) and depth error (its z component).
/// de <= te always.
pub fn te_de<S: Real>(pred: &JointSet<S>, gt: &JointSet<S>) -> Result<(S, S)> {
    check_len(pred, gt)?;
    let d = centroid(pred) - centroid(gt);
    Ok((d.norm(), d.z.abs()))
}

/// Root-aligned errors. rs_mje translates the prediction so roots (joint 0)
/// coincide; mje additionally applies the least-squares global scale about
/// the root, s* = sum(<p, g>) / sum(|p|^2) over root-relative joints.
pub fn aligned_mje<S: Real>(pred: &JointSet<S>, gt: &JointSet<S>) -> Result<(S, S)> {
    check_len(pred, gt)?;
    let p_rel = pred.root_relative();
    let g_rel = gt.root_relative();
    let rs_mje = cs_mje(&p_rel, &g_rel)?;

    let mut num = S::zero();
    let mut den = S::zero();
    for (&p, &g) in p_rel.joints.iter().zip(&g_rel.joints) {
        num += p.dot(g);
        den += p.norm_sq();
    }
    if den <= S::zero() {
        return Err(Error::DegenerateAlignment);
    }
    let scale = num / den;
    let scaled = JointSet::new(p_rel.joints.iter().map(|&p| p * scale).collect());
    let mje = cs_mje(&scaled, &g_rel)?;
    Ok((mje, rs_mje))
}

/// The scale objective minimized by aligned_mje's closed form; exposed so
/// tests can cross-check s* against a 1-D numerical minimizer.
pub fn scale_objective<S: Real>(pred: &JointSet<S>, gt: &JointSet<S>, scale: S) -> S {
    let p_rel = pred.root_relative();
    let g_rel = gt.root_relative();
    p_rel
        .joints
        .iter()
        .zip(&g_rel.joints)
        .map(|(&p, &g)| (p * scale - g).norm_sq())
        .sum()
}

/// Median of a sample set; the mean of the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of empty sample");
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Aggregated metrics over an evaluation batch, with the per-sample vectors
/// kept so callers can form medians or distributions.
#[derive(Debug, Clone)]
pub struct MetricReport {
    /// Mean camera-space joint error, mm.
    pub cs_mje: f64,
    /// AUC of PCK over all per-joint errors pooled across samples.
    pub cs_auc: f64,
    /// Mean centroid translation error, mm.
    pub te: f64,
    /// Mean centroid depth error, mm.
    pub de: f64,
    /// Mean root-aligned (scale + translation) joint error, mm.
    pub mje: f64,
    /// Mean root-translated joint error, mm.
    pub rs_mje: f64,
    pub n_samples: usize,
    /// Samples where the scale alignment was degenerate (all-root
    /// predictions); their mje falls back to rs_mje.
    pub degenerate_alignments: usize,
    pub per_sample_cs_mje: Vec<f64>,
    pub per_sample_te: Vec<f64>,
    pub per_sample_de: Vec<f64>,
    pub per_sample_mje: Vec<f64>,
    pub per_sample_rs_mje: Vec<f64>,
    /// Per-joint errors pooled across all samples; feeds cs_auc.
    pub per_joint_errors: Vec<f64>,
}

impl MetricReport {
    pub fn median_cs_mje(&self) -> f64 {
        median(&self.per_sample_cs_mje)
    }

    pub fn median_de(&self) -> f64 {
        median(&self.per_sample_de)
    }
}

/// Streaming builder for [`MetricReport`]; feed one (pred, gt) pair per
/// evaluation sample.
#[derive(Debug, Default)]
pub struct MetricAccumulator {
    per_sample_cs_mje: Vec<f64>,
    per_sample_te: Vec<f64>,
    per_sample_de: Vec<f64>,
    per_sample_mje: Vec<f64>,
    per_sample_rs_mje: Vec<f64>,
    per_joint_errors: Vec<f64>,
    degenerate_alignments: usize,
}

impl MetricAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add<S: Real>(&mut self, pred: &JointSet<S>, gt: &JointSet<S>) -> Result<()> {
        let errs = joint_errors(pred, gt)?;
        self.per_joint_errors
            .extend(errs.iter().map(|&e| e.to_f64()));
        self.per_sample_cs_mje.push(cs_mje(pred, gt)?.to_f64());
        let (te, de) = te_de(pred, gt)?;
        self.per_sample_te.push(te.to_f64());
        self.per_sample_de.push(de.to_f64());
        let (mje, rs_mje) = match aligned_mje(pred, gt) {
            Ok((m, r)) => (m.to_f64(), r.to_f64()),
            Err(Error::DegenerateAlignment) => {
                self.degenerate_alignments += 1;
                let rs = cs_mje(&pred.root_relative(), &gt.root_relative())?.to_f64();
                (rs, rs)
            }
            Err(e) => return Err(e),
        };
        self.per_sample_mje.push(mje);
        self.per_sample_rs_mje.push(rs_mje);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.per_sample_cs_mje.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_sample_cs_mje.is_empty()
    }

    pub fn finish(self) -> Result<MetricReport> {
        if self.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        Ok(MetricReport {
            cs_mje: mean(&self.per_sample_cs_mje),
            cs_auc: auc_pck(&self.per_joint_errors)?,
            te: mean(&self.per_sample_te),
            de: mean(&self.per_sample_de),
            mje: mean(&self.per_sample_mje),
            rs_mje: mean(&self.per_sample_rs_mje),
            n_samples: self.per_sample_cs_mje.len(),
            degenerate_alignments: self.degenerate_alignments,
            per_sample_cs_mje: self.per_sample_cs_mje,
            per_sample_te: self.per_sample_te,
            per_sample_de: self.per_sample_de,
            per_sample_mje: self.per_sample_mje,
            per_sample_rs_mje: self.per_sample_rs_mje,
            per_joint_errors: self.per_joint_errors,
        })
    }
}
