//! Dense offset-field pose representation and its inverse.
//!
//! A hand pose is re-parameterized as a field over 3D points: each point
//! near the surface stores, per joint, a voting weight w = 1 - dist/r and a
//! unit direction d toward the joint, gated by three conditions (the point
//! is near the surface, inside the joint's ball of radius r, and among the
//! joint's K nearest near-surface points). `build_targets` produces that
//! field from ground truth; `cast_votes` maps a predicted field back to
//! joint positions by a weighted average over the strongest voters.

use std::cmp::Ordering;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn::knn_ball_select;
use crate::math::{CompensatedSum, CompensatedSum3, Mat3, Point3, Vec3};
use crate::scalar::{rl, Real};
use crate::sdf::MeshSdf;

/// Ordered joint positions in millimetres. The joint order is fixed per
/// dataset and documented in GLOSSARY.md.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSet<S> {
    pub joints: Vec<Point3<S>>,
}

impl<S: Real> JointSet<S> {
    pub fn new(joints: Vec<Point3<S>>) -> Self {
        Self { joints }
    }

    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn translated(&self, t: Vec3<S>) -> Self {
        Self::new(self.joints.iter().map(|&j| j + t).collect())
    }

    pub fn rotated(&self, r: &Mat3<S>) -> Self {
        Self::new(self.joints.iter().map(|&j| r.apply(j)).collect())
    }

    /// Joints relative to the root joint (index 0, the wrist).
    pub fn root_relative(&self) -> Self {
        let root = self.joints[0];
        Self::new(self.joints.iter().map(|&j| j - root).collect())
    }

    pub fn cast<T: Real>(&self) -> JointSet<T> {
        JointSet::new(self.joints.iter().map(|j| Vec3::from_f64(j.to_f64())).collect())
    }
}

/// One 4D offset entry: voting weight in [0, 1] plus a direction that is
/// either unit length or exactly zero. Ground-truth targets satisfy
/// w = 0 <=> d = 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffsetVector4<S> {
    pub w: S,
    pub d: Vec3<S>,
}

impl<S: Real> OffsetVector4<S> {
    pub fn zero() -> Self {
        Self {
            w: S::zero(),
            d: Vec3::zero(),
        }
    }
}

/// Per-point field value: signed distance plus one offset entry per joint.
/// Ground-truth targets and network predictions share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSample<S> {
    pub s: S,
    pub v: Vec<OffsetVector4<S>>,
}

pub type FieldTargets<S> = FieldSample<S>;

/// Field construction and voting parameters.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VotingParams<S> {
    /// Near-surface clamping distance delta, mm.
    pub delta: S,
    /// Joint ball radius r, mm.
    pub r: S,
    /// KNN count over near-surface points.
    pub k: usize,
    /// Fraction of valid voters kept per joint, by descending weight.
    pub fraction: S,
}

impl<S: Real> Default for VotingParams<S> {
    fn default() -> Self {
        Self {
            delta: rl(5.0),
            r: rl(80.0),
            k: 1024,
            fraction: rl(0.5),
        }
    }
}

/// Ground-truth field targets for a batch of query points.
///
/// For each point p: s = signed distance to the mesh. For each joint t the
/// entry is (1 - |j_t - p|/r, unit(j_t - p)) iff |s| < delta, |j_t - p| <= r,
/// and p is among the K nearest near-surface points of j_t (near-surface
/// meaning |s| < delta within this batch); otherwise (0, 0). A point exactly
/// on the joint gets w = 1 and d = 0.
pub fn build_targets<S: Real>(
    points: &[Point3<S>],
    joints: &JointSet<S>,
    sdf: &MeshSdf<S>,
    params: &VotingParams<S>,
) -> Vec<FieldTargets<S>> {
    let t_count = joints.len();
    let s_values: Vec<S> = points
        .par_iter()
        .map(|&p| sdf.signed_distance(p))
        .collect();

    // Near-surface subset of this batch; KNN-ball sets are computed over it.
    let near_idx: Vec<usize> = (0..points.len())
        .filter(|&i| s_values[i].abs() < params.delta)
        .collect();
    let near_pts: Vec<Point3<S>> = near_idx.iter().map(|&i| points[i]).collect();

    let mut targets: Vec<FieldTargets<S>> = s_values
        .iter()
        .map(|&s| FieldSample {
            s,
            v: vec![OffsetVector4::zero(); t_count],
        })
        .collect();

    let per_joint: Vec<Vec<(usize, OffsetVector4<S>)>> = (0..t_count)
        .into_par_iter()
        .map(|t| {
            let j = joints.joints[t];
            let selected = knn_ball_select(j, &near_pts, params.k, params.r);
            let mut entries = Vec::with_capacity(selected.len());
            for &ni in &selected {
                let p = near_pts[ni as usize];
                let dist = j.dist(p);
                let w = S::one() - dist / params.r;
                let entry = if dist == S::zero() {
                    // On the joint itself: weight 1, direction undefined -> 0.
                    OffsetVector4 {
                        w: S::one(),
                        d: Vec3::zero(),
                    }
                } else if w == S::zero() {
                    // Exactly on the ball boundary: zero weight carries no
                    // vote, so keep the w = 0 <=> d = 0 invariant.
                    OffsetVector4::zero()
                } else {
                    OffsetVector4 {
                        w,
                        d: (j - p) / dist,
                    }
                };
                entries.push((near_idx[ni as usize], entry));
            }
            entries
        })
        .collect();

    for (t, entries) in per_joint.into_iter().enumerate() {
        for (pi, entry) in entries {
            targets[pi].v[t] = entry;
        }
    }
    targets
}

/// Converts one 4D offset entry back to a 3D offset:
/// o = [|s| < delta] * r * (1 - w) * d.
pub fn reconstruct_offset<S: Real>(
    v: &OffsetVector4<S>,
    s: S,
    params: &VotingParams<S>,
) -> Vec3<S> {
    if s.abs() < params.delta {
        v.d * (params.r * (S::one() - v.w))
    } else {
        Vec3::zero()
    }
}

/// Aggregates a predicted field into joint positions. Valid voters are the
/// points with |s| < delta; per joint, the top ceil(fraction * n_valid)
/// voters by weight cast votes o + p averaged with weights w. Joints with no
/// valid voter, or whose selected weights are all zero, report
/// `NoValidVoters` individually; the caller decides the fallback.
pub fn cast_votes<S: Real>(
    points: &[Point3<S>],
    predictions: &[FieldSample<S>],
    params: &VotingParams<S>,
) -> Vec<Result<Point3<S>>> {
    assert_eq!(
        points.len(),
        predictions.len(),
        "predictions must align 1:1 with points"
    );
    let t_count = predictions.first().map_or(0, |f| f.v.len());

    let valid: Vec<usize> = (0..points.len())
        .filter(|&i| predictions[i].s.abs() < params.delta)
        .collect();
    if valid.is_empty() {
        return (0..t_count)
            .map(|t| Err(Error::NoValidVoters { joint: t }))
            .collect();
    }
    let keep = ((params.fraction.to_f64() * valid.len() as f64).ceil() as usize)
        .clamp(1, valid.len());

    (0..t_count)
        .into_par_iter()
        .map(|t| {
            // Canonical order (weight desc, then position asc) makes the
            // selection invariant to input permutation.
            let mut order: Vec<usize> = valid.clone();
            order.sort_unstable_by(|&a, &b| {
                let (wa, wb) = (predictions[a].v[t].w, predictions[b].v[t].w);
                wb.partial_cmp(&wa)
                    .unwrap_or(Ordering::Equal)
                    .then_with(|| cmp_point(points[a], points[b]))
            });
            order.truncate(keep);

            let mut weight_sum = CompensatedSum::<S>::new();
            let mut vote_sum = CompensatedSum3::<S>::new();
            for &i in &order {
                let w = predictions[i].v[t].w;
                if w <= S::zero() {
                    continue;
                }
                let o = reconstruct_offset(&predictions[i].v[t], predictions[i].s, params);
                vote_sum.add((o + points[i]) * w);
                weight_sum.add(w);
            }
            let total = weight_sum.value();
            if total <= S::zero() {
                Err(Error::NoValidVoters { joint: t })
            } else {
                Ok(vote_sum.value() / total)
            }
        })
        .collect()
}

fn cmp_point<S: Real>(a: Point3<S>, b: Point3<S>) -> Ordering {
    a.x.partial_cmp(&b.x)
        .unwrap_or(Ordering::Equal)
        .then(a.y.partial_cmp(&b.y).unwrap_or(Ordering::Equal))
        .then(a.z.partial_cmp(&b.z).unwrap_or(Ordering::Equal))
}

/// Collapses per-joint vote results, propagating the first failure.
pub fn collect_joint_set<S: Real>(votes: Vec<Result<Point3<S>>>) -> Result<JointSet<S>> {
    let mut joints = Vec::with_capacity(votes.len());
    for v in votes {
        joints.push(v?);
    }
    Ok(JointSet::new(joints))
}

/// Coordinate space of a serialized joint set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Space {
    Camera,
    RootRelative,
}

impl Space {
    pub fn as_str(self) -> &'static str {
        match self {
            Space::Camera => "camera",
            Space::RootRelative => "root_relative",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "camera" => Ok(Space::Camera),
            "root_relative" => Ok(Space::RootRelative),
            other => Err(Error::Dataset(format!("unknown joint space {other:?}"))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JointSetDoc {
    unit: String,
    space: String,
    joints: Vec<[f64; 3]>,
    /// Indices of joints that had no valid voters and carry a fallback
    /// position instead of a real estimate.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    invalid: Vec<usize>,
}

/// Writes a joint set as JSON, always in millimetres.
pub fn write_joint_set<S: Real, P: AsRef<Path>>(
    path: P,
    joints: &JointSet<S>,
    space: Space,
    invalid: &[usize],
) -> Result<()> {
    let doc = JointSetDoc {
        unit: "mm".into(),
        space: space.as_str().into(),
        joints: joints
            .joints
            .iter()
            .map(|j| [j.x.to_f64(), j.y.to_f64(), j.z.to_f64()])
            .collect(),
        invalid: invalid.to_vec(),
    };
    let file = std::fs::File::create(path.as_ref())?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(file), &doc)?;
    Ok(())
}

/// Reads a joint set; returns the positions, their space, and any joints
/// flagged invalid by the writer.
pub fn read_joint_set<S: Real, P: AsRef<Path>>(
    path: P,
) -> Result<(JointSet<S>, Space, Vec<usize>)> {
    let file = std::fs::File::open(path.as_ref())?;
    let doc: JointSetDoc = serde_json::from_reader(std::io::BufReader::new(file))?;
    if doc.unit != "mm" {
        return Err(Error::Dataset(format!(
            "joint set unit must be mm, got {:?}",
            doc.unit
        )));
    }
    let space = Space::parse(&doc.space)?;
    let joints = JointSet::new(
        doc.joints
            .iter()
            .map(|j| Vec3::new(rl(j[0]), rl(j[1]), rl(j[2])))
            .collect(),
    );
    Ok((joints, space, doc.invalid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::icosphere;
    use rand::seq::SliceRandom;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sphere_scene() -> (MeshSdf<f64>, JointSet<f64>, Vec<Point3<f64>>) {
        // A 30 mm sphere at z = 500 with two "joints" inside it; the query
        // points are its own (exactly on-surface) vertices plus far points.
        let center = Vec3::new(0.0, 0.0, 500.0);
        let mesh = icosphere(30.0f64, 2).translated(center);
        let points: Vec<Point3<f64>> = mesh
            .vertices
            .iter()
            .copied()
            .chain((0..50).map(|i| center + Vec3::new(200.0 + i as f64, 0.0, 0.0)))
            .collect();
        let joints = JointSet::new(vec![center, center + Vec3::new(12.0, -5.0, 3.0)]);
        (MeshSdf::new(mesh).unwrap(), joints, points)
    }

    #[test]
    fn far_points_get_all_zero_vectors() {
        let (sdf, joints, points) = sphere_scene();
        let targets = build_targets(&points, &joints, &sdf, &VotingParams::default());
        for tg in targets.iter().filter(|tg| tg.s.abs() >= 5.0) {
            for v in &tg.v {
                assert_eq!(*v, OffsetVector4::zero());
            }
        }
    }

    #[test]
    fn weight_is_one_minus_normalized_distance() {
        let (sdf, _, _) = sphere_scene();
        let center = Vec3::new(0.0, 0.0, 500.0);
        // One joint exactly 40 mm from a surface point along +x: that point
        // sits at the sphere surface (s = 0) and 40 = r/2 away from j.
        let p = center + Vec3::new(30.0, 0.0, 0.0);
        let j = center + Vec3::new(70.0, 0.0, 0.0);
        let targets = build_targets(
            &[p],
            &JointSet::new(vec![j]),
            &sdf,
            &VotingParams::default(),
        );
        let v = &targets[0].v[0];
        assert!((v.w - 0.5).abs() < 1e-9);
        assert!((v.d - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-9);
    }

    #[test]
    fn knn_cap_matches_sort_oracle() {
        let (sdf, _, _) = sphere_scene();
        let center = Vec3::new(0.0, 0.0, 500.0);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // 2000 points on/near the surface, all within delta.
        let points: Vec<Point3<f64>> = (0..2000)
            .map(|_| {
                let d = Vec3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                )
                .normalized_or_zero(1e-12);
                center + d * rng.gen_range(28.0..32.0)
            })
            .collect();
        let joints = JointSet::new(vec![center, center + Vec3::new(60.0, 0.0, 0.0)]);
        let params = VotingParams {
            k: 1024,
            ..VotingParams::default()
        };
        let targets = build_targets(&points, &joints, &sdf, &params);

        for (t, &j) in joints.joints.iter().enumerate() {
            // Oracle: sort every near-surface point by distance, keep those
            // within r, cap at K.
            let mut order: Vec<usize> = (0..points.len())
                .filter(|&i| targets[i].s.abs() < params.delta)
                .collect();
            order.sort_by(|&a, &b| {
                j.dist(points[a])
                    .partial_cmp(&j.dist(points[b]))
                    .unwrap()
                    .then(a.cmp(&b))
            });
            let expected: std::collections::BTreeSet<usize> = order
                .into_iter()
                .filter(|&i| j.dist(points[i]) <= params.r)
                .take(params.k)
                .collect();
            let got: std::collections::BTreeSet<usize> = (0..points.len())
                .filter(|&i| targets[i].v[t].w > 0.0)
                .collect();
            assert_eq!(got.len(), expected.len().min(params.k));
            assert_eq!(got, expected);
            assert!(got.len() <= params.k);
        }
    }

    #[test]
    fn weight_range_and_unit_directions() {
        let (sdf, joints, points) = sphere_scene();
        let targets = build_targets(&points, &joints, &sdf, &VotingParams::default());
        for tg in &targets {
            for v in &tg.v {
                assert!(v.w >= 0.0 && v.w <= 1.0);
                let n = v.d.norm();
                assert!(n < 1e-9 || (n - 1.0).abs() < 1e-9);
                if v.w == 0.0 {
                    assert_eq!(v.d, Vec3::zero());
                }
            }
        }
    }

    #[test]
    fn reconstruct_offset_examples() {
        let params = VotingParams::<f64>::default();
        let v = OffsetVector4 {
            w: 0.5,
            d: Vec3::new(1.0, 0.0, 0.0),
        };
        assert_eq!(reconstruct_offset(&v, 0.0, &params), Vec3::new(40.0, 0.0, 0.0));
        assert_eq!(reconstruct_offset(&v, 6.0, &params), Vec3::zero());
        let on_joint = OffsetVector4 {
            w: 1.0,
            d: Vec3::new(0.0, 1.0, 0.0),
        };
        assert_eq!(reconstruct_offset(&on_joint, 0.0, &params), Vec3::zero());
    }

    #[test]
    fn single_voter_vote() {
        let params = VotingParams::<f64>::default();
        let p = Vec3::new(0.0, 0.0, 500.0);
        // w = 1 - 10/80 so the offset is exactly (10, 0, 0).
        let pred = FieldSample {
            s: 0.0,
            v: vec![OffsetVector4 {
                w: 1.0 - 10.0 / 80.0,
                d: Vec3::new(1.0, 0.0, 0.0),
            }],
        };
        let votes = cast_votes(&[p], &[pred], &params);
        let j = votes[0].as_ref().unwrap();
        assert!(j.dist(Vec3::new(10.0, 0.0, 500.0)) < 1e-12);
    }

    #[test]
    fn exact_targets_round_trip_through_votes() {
        let (sdf, joints, points) = sphere_scene();
        let params = VotingParams::default();
        let targets = build_targets(&points, &joints, &sdf, &params);
        for fraction in [0.25, 0.5, 1.0] {
            let p = VotingParams {
                fraction,
                ..params
            };
            let votes = cast_votes(&points, &targets, &p);
            for (t, v) in votes.iter().enumerate() {
                let j = v.as_ref().expect("sphere joints have voters");
                for axis in 0..3 {
                    let err = (j.component(axis) - joints.joints[t].component(axis)).abs();
                    assert!(err < 1e-4, "joint {t} axis {axis}: err {err}");
                }
            }
        }
    }

    #[test]
    fn votes_are_permutation_invariant() {
        let (sdf, joints, points) = sphere_scene();
        let params = VotingParams::default();
        let targets = build_targets(&points, &joints, &sdf, &params);
        let base = cast_votes(&points, &targets, &params);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut perm: Vec<usize> = (0..points.len()).collect();
        perm.shuffle(&mut rng);
        let sp: Vec<Point3<f64>> = perm.iter().map(|&i| points[i]).collect();
        let st: Vec<FieldSample<f64>> = perm.iter().map(|&i| targets[i].clone()).collect();
        let shuffled = cast_votes(&sp, &st, &params);

        for (a, b) in base.iter().zip(&shuffled) {
            let (a, b) = (a.as_ref().unwrap(), b.as_ref().unwrap());
            assert!(a.dist(*b) < 1e-9);
        }
    }

    #[test]
    fn rigid_motion_equivariance() {
        let (sdf, joints, points) = sphere_scene();
        let params = VotingParams::default();
        let base = build_targets(&points, &joints, &sdf, &params);

        let mut rng = ChaCha8Rng::seed_from_u64(19);
        for _ in 0..3 {
            let axis = Vec3::new(
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
                rng.gen_range(-1.0..1.0),
            )
            .normalized_or_zero(1e-12);
            let rot = Mat3::from_axis_angle(axis, rng.gen_range(0.0..std::f64::consts::PI));
            let t = Vec3::new(
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
                rng.gen_range(-50.0..50.0),
            );
            let moved_sdf = MeshSdf::new(sdf.mesh().rotated(&rot).translated(t)).unwrap();
            let moved_joints = joints.rotated(&rot).translated(t);
            let moved_points: Vec<Point3<f64>> =
                points.iter().map(|&p| rot.apply(p) + t).collect();
            let moved = build_targets(&moved_points, &moved_joints, &moved_sdf, &params);

            for (a, b) in base.iter().zip(&moved) {
                assert!((a.s - b.s).abs() < 1e-6);
                for (va, vb) in a.v.iter().zip(&b.v) {
                    assert!((va.w - vb.w).abs() < 1e-6);
                    assert!((rot.apply(va.d) - vb.d).norm() < 1e-6);
                }
            }
        }
    }

    #[test]
    fn no_valid_voters_is_reported_per_joint() {
        let params = VotingParams::<f64>::default();
        let p = Vec3::new(0.0, 0.0, 500.0);
        let pred = FieldSample {
            s: 12.0,
            v: vec![OffsetVector4::zero(); 2],
        };
        let votes = cast_votes(&[p], &[pred], &params);
        assert_eq!(votes.len(), 2);
        for (t, v) in votes.iter().enumerate() {
            match v {
                Err(Error::NoValidVoters { joint }) => assert_eq!(*joint, t),
                other => panic!("expected NoValidVoters, got {other:?}"),
            }
        }
    }

    #[test]
    fn joint_set_json_round_trip() {
        let dir = std::env::temp_dir().join("nvf_jointset_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("joints.json");
        let js = JointSet::new(vec![
            Vec3::new(1.5, -2.25, 500.0),
            Vec3::new(0.0, 0.0, 480.0),
        ]);
        write_joint_set(&path, &js, Space::Camera, &[1]).unwrap();
        let (back, space, invalid) = read_joint_set::<f64, _>(&path).unwrap();
        assert_eq!(back, js);
        assert_eq!(space, Space::Camera);
        assert_eq!(invalid, vec![1]);
    }
}
