//! Procedural articulated-hand proxy: a 21-joint skeleton fleshed out with
//! capsules and meshed by extracting the zero level set of their union SDF.
//!
//! Joint layout: index 0 is the wrist; each finger f in (thumb, index,
//! middle, ring, pinky) owns joints 1+4f .. 4+4f as MCP, PIP, DIP, TIP.
//! Bones per finger run wrist->MCP (rigid metacarpal), MCP->PIP,
//! PIP->DIP, DIP->TIP; the articulation angle stored at a joint bends the
//! bone leaving that joint. The hand rest frame has fingers along +y and
//! the back of the hand toward +z, so flexion curls joints toward -z.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::marching_cubes::{marching_cubes, ScalarGrid};
use crate::math::{Mat3, Point3, Vec3};
use crate::mesh::TriMesh;
use crate::pose_field::JointSet;
use crate::scalar::{rl, Real};

pub const JOINT_COUNT: usize = 21;
pub const FINGER_COUNT: usize = 5;
pub const BONES_PER_FINGER: usize = 4;
pub const WRIST: usize = 0;

/// Index of a finger's joint; `knuckle` 0..4 maps to MCP, PIP, DIP, TIP.
pub fn joint_index(finger: usize, knuckle: usize) -> usize {
    debug_assert!(finger < FINGER_COUNT && knuckle < BONES_PER_FINGER);
    1 + 4 * finger + knuckle
}

/// Default bone lengths in mm per finger: metacarpal, proximal, middle,
/// distal. The middle-finger proximal entry doubles as the reference bone
/// for the hand-scale scalar.
pub const DEFAULT_BONE_LENGTHS: [[f64; 4]; 5] = [
    [45.0, 35.0, 28.0, 24.0],
    [70.0, 40.0, 25.0, 22.0],
    [68.0, 45.0, 28.0, 24.0],
    [62.0, 42.0, 26.0, 22.0],
    [58.0, 32.0, 20.0, 20.0],
];

/// Default capsule radii in mm, same layout as the lengths.
pub const DEFAULT_CAPSULE_RADII: [[f64; 4]; 5] = [
    [13.0, 10.0, 9.0, 8.0],
    [11.0, 9.5, 8.5, 7.5],
    [11.0, 9.5, 8.5, 7.5],
    [11.0, 9.0, 8.0, 7.0],
    [10.0, 8.5, 7.5, 7.0],
];

/// Fixed metacarpal splay from the +y finger axis, radians, one per finger.
/// Part of the skeleton rather than the articulation.
const SPLAY: [f64; 5] = [0.96, 0.33, 0.02, -0.24, -0.50];

/// Finger whose proximal bone defines the hand scale (middle finger).
pub const REFERENCE_FINGER: usize = 2;

pub const FLEXION_MIN: f64 = 0.0;
pub const FLEXION_MAX: f64 = std::f64::consts::FRAC_PI_2;
pub const ABDUCTION_LIMIT: f64 = std::f64::consts::FRAC_PI_6;

/// Full description of one hand instance: skeleton dimensions, articulation
/// angles, and the rigid camera-frame placement.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HandProxySpec<S> {
    pub bone_lengths: [[S; 4]; 5],
    pub capsule_radii: [[S; 4]; 5],
    /// Flexion per joint, radians in [0, pi/2]; wrist and tip entries are
    /// carried but never articulate a bone.
    pub flexion: [S; JOINT_COUNT],
    /// Abduction per joint, radians in [-pi/6, pi/6].
    pub abduction: [S; JOINT_COUNT],
    /// Global rotation as a rotation vector (axis * angle, radians).
    pub rotation: Vec3<S>,
    /// Wrist position in the camera frame, mm.
    pub translation: Vec3<S>,
    /// Uniform size multiplier applied to lengths and radii.
    pub scale: S,
}

impl<S: Real> Default for HandProxySpec<S> {
    fn default() -> Self {
        let cast4x5 = |a: [[f64; 4]; 5]| a.map(|row| row.map(|v| rl::<S>(v)));
        Self {
            bone_lengths: cast4x5(DEFAULT_BONE_LENGTHS),
            capsule_radii: cast4x5(DEFAULT_CAPSULE_RADII),
            flexion: [S::zero(); JOINT_COUNT],
            abduction: [S::zero(); JOINT_COUNT],
            rotation: Vec3::zero(),
            translation: Vec3::new(S::zero(), S::zero(), rl(600.0)),
            scale: S::one(),
        }
    }
}

impl<S: Real> HandProxySpec<S> {
    pub fn validate(&self) -> Result<()> {
        let eps = rl::<S>(1e-12);
        for f in 0..FINGER_COUNT {
            for b in 0..BONES_PER_FINGER {
                if self.bone_lengths[f][b] <= S::zero() {
                    return Err(Error::InvalidPlacement(format!(
                        "bone length ({f},{b}) must be positive"
                    )));
                }
                if self.capsule_radii[f][b] <= S::zero() {
                    return Err(Error::InvalidPlacement(format!(
                        "capsule radius ({f},{b}) must be positive"
                    )));
                }
            }
        }
        for j in 0..JOINT_COUNT {
            let flex = self.flexion[j].to_f64();
            if !(FLEXION_MIN - 1e-12..=FLEXION_MAX + 1e-12).contains(&flex) {
                return Err(Error::InvalidPlacement(format!(
                    "flexion[{j}] = {flex} outside [0, pi/2]"
                )));
            }
            let abd = self.abduction[j].to_f64();
            if abd.abs() > ABDUCTION_LIMIT + 1e-12 {
                return Err(Error::InvalidPlacement(format!(
                    "abduction[{j}] = {abd} outside [-pi/6, pi/6]"
                )));
            }
        }
        if self.scale <= eps {
            return Err(Error::InvalidPlacement("scale must be positive".into()));
        }
        if !self.rotation.is_finite() || !self.translation.is_finite() {
            return Err(Error::InvalidPlacement("non-finite rigid placement".into()));
        }
        Ok(())
    }

    /// Metric length of the middle-finger proximal bone after scaling; the
    /// conditioning scalar. Articulation never changes it.
    pub fn hand_scale(&self) -> S {
        self.bone_lengths[REFERENCE_FINGER][1] * self.scale
    }

    fn global_rotation(&self) -> Mat3<S> {
        let angle = self.rotation.norm();
        if angle.to_f64() < 1e-12 {
            Mat3::identity()
        } else {
            Mat3::from_axis_angle(self.rotation / angle, angle)
        }
    }

    /// Joint positions in the hand-local scaled frame (wrist at origin).
    fn local_joints(&self) -> [Point3<S>; JOINT_COUNT] {
        let mut joints = [Vec3::zero(); JOINT_COUNT];
        let y = Vec3::new(S::zero(), S::one(), S::zero());
        for f in 0..FINGER_COUNT {
            let mut frame = Mat3::from_axis_angle(
                Vec3::new(S::zero(), S::zero(), S::one()),
                rl(SPLAY[f]),
            );
            let mut p = Vec3::zero();
            p = p + frame.apply(y) * (self.bone_lengths[f][0] * self.scale);
            joints[joint_index(f, 0)] = p;
            for b in 1..BONES_PER_FINGER {
                // The joint articulating this bone: MCP, PIP, then DIP.
                let j = joint_index(f, b - 1);
                let abduct = Mat3::from_axis_angle(
                    Vec3::new(S::zero(), S::zero(), S::one()),
                    self.abduction[j],
                );
                let flex = Mat3::from_axis_angle(
                    Vec3::new(S::one(), S::zero(), S::zero()),
                    -self.flexion[j],
                );
                frame = frame.matmul(&abduct).matmul(&flex);
                p = p + frame.apply(y) * (self.bone_lengths[f][b] * self.scale);
                joints[joint_index(f, b)] = p;
            }
        }
        joints
    }

    /// Forward kinematics into the camera frame.
    pub fn joints(&self) -> Result<JointSet<S>> {
        self.validate()?;
        let rot = self.global_rotation();
        Ok(JointSet::new(
            self.local_joints()
                .iter()
                .map(|&j| rot.apply(j) + self.translation)
                .collect(),
        ))
    }

    /// The 20 bone capsules in the camera frame.
    pub fn capsules(&self) -> Result<Vec<Capsule<S>>> {
        self.validate()?;
        let local = self.local_joints();
        let rot = self.global_rotation();
        let place = |p: Point3<S>| rot.apply(p) + self.translation;
        let mut out = Vec::with_capacity(FINGER_COUNT * BONES_PER_FINGER);
        for f in 0..FINGER_COUNT {
            let mut prev = place(Vec3::zero());
            for b in 0..BONES_PER_FINGER {
                let next = place(local[joint_index(f, b)]);
                out.push(Capsule {
                    a: prev,
                    b: next,
                    radius: self.capsule_radii[f][b] * self.scale,
                });
                prev = next;
            }
        }
        Ok(out)
    }

    pub fn cast<T: Real>(&self) -> HandProxySpec<T> {
        let c = |v: S| T::from_f64(v.to_f64());
        HandProxySpec {
            bone_lengths: self.bone_lengths.map(|row| row.map(c)),
            capsule_radii: self.capsule_radii.map(|row| row.map(c)),
            flexion: self.flexion.map(c),
            abduction: self.abduction.map(c),
            rotation: Vec3::from_f64(self.rotation.to_f64()),
            translation: Vec3::from_f64(self.translation.to_f64()),
            scale: c(self.scale),
        }
    }
}

/// A sphere-swept segment; the bone primitive.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Capsule<S> {
    pub a: Point3<S>,
    pub b: Point3<S>,
    pub radius: S,
}

impl<S: Real> Capsule<S> {
    /// Exact signed distance to the capsule surface.
    pub fn signed_distance(&self, p: Point3<S>) -> S {
        let ab = self.b - self.a;
        let denom = ab.norm_sq();
        let t = if denom > S::zero() {
            ((p - self.a).dot(ab) / denom).max(S::zero()).min(S::one())
        } else {
            S::zero()
        };
        (p - (self.a + ab * t)).norm() - self.radius
    }

    pub fn aabb(&self) -> (Point3<S>, Point3<S>) {
        let r = Vec3::splat(self.radius);
        (
            self.a.min_by_component(self.b) - r,
            self.a.max_by_component(self.b) + r,
        )
    }
}

/// Signed distance to the capsule union: exact outside and on the boundary,
/// a conservative bound inside, which is all iso-surface extraction needs.
pub fn union_signed_distance<S: Real>(capsules: &[Capsule<S>], p: Point3<S>) -> S {
    capsules
        .iter()
        .map(|c| c.signed_distance(p))
        .fold(S::infinity(), S::min)
}

/// Meshes the capsule union by marching cubes over the analytic SDF.
///
/// The grid is laid out in the hand-local frame (where the bounding box is
/// tight) and the result is rotated into the camera frame, so the cell count
/// does not balloon for rotated hands.
pub fn mesh_hand<S: Real>(spec: &HandProxySpec<S>, pitch: S) -> Result<TriMesh<S>> {
    if pitch <= S::zero() {
        return Err(Error::Config("mesh pitch must be positive".into()));
    }
    let local = HandProxySpec {
        rotation: Vec3::zero(),
        translation: Vec3::zero(),
        ..spec.clone()
    };
    let capsules = local.capsules()?;
    let mut lo = Vec3::splat(S::infinity());
    let mut hi = Vec3::splat(S::neg_infinity());
    for c in &capsules {
        let (clo, chi) = c.aabb();
        lo = lo.min_by_component(clo);
        hi = hi.max_by_component(chi);
    }
    let margin = pitch * rl(2.0);
    lo = lo - Vec3::splat(margin);
    hi = hi + Vec3::splat(margin);
    let dims = [0, 1, 2].map(|axis| {
        let extent = (hi.component(axis) - lo.component(axis)) / pitch;
        (extent.to_f64().ceil() as usize + 1).max(2)
    });
    let grid = ScalarGrid::from_fn(lo, pitch, dims, |p| union_signed_distance(&capsules, p))?;
    let mesh = marching_cubes(&grid, S::zero())?;
    mesh.require_watertight()?;
    Ok(mesh
        .rotated(&spec.global_rotation())
        .translated(spec.translation))
}
