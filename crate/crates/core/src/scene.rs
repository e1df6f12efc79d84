//! Scene assembly and dataset I/O: turns a hand spec into the full
//! (image, mask, mesh, joints, camera, hand-scale) tuple and persists
//! datasets as one directory per scene.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bvh::TriBvh;
use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::math::{Point3, Vec3};
use crate::hand::{
    joint_index, HandProxySpec, BONES_PER_FINGER, FINGER_COUNT, JOINT_COUNT,
};
use crate::mesh::{read_obj, write_obj, TriMesh};
use crate::pose_field::{read_joint_set, write_joint_set, JointSet, Space};
use crate::render::{
    read_pbm, read_ppm, render_scene, write_pbm, write_ppm, Mask, Occluder, RenderedImage,
};
use crate::scalar::{rl, Real};
use crate::sdf::MeshSdf;

/// The one reference pinhole camera all scenes share.
pub fn reference_camera<S: Real>() -> CameraIntrinsics<S> {
    CameraIntrinsics::new(rl(160.0), rl(160.0), rl(64.0), rl(64.0), 128, 128)
}

/// Frustum depth range shared by scene placement and inference grids, mm.
pub const Z_NEAR: f64 = 300.0;
pub const Z_FAR: f64 = 1000.0;

/// Everything one training or evaluation sample carries.
#[derive(Debug, Clone)]
pub struct SceneRecord<S> {
    pub image: RenderedImage,
    pub mask: Mask,
    pub mesh: TriMesh<S>,
    /// Ground-truth joints, camera space, mm.
    pub joints: JointSet<S>,
    pub cam: CameraIntrinsics<S>,
    /// Middle-finger proximal bone length after scaling, mm.
    pub hand_scale: S,
    pub meta: SceneMeta<S>,
}

/// Generation parameters persisted alongside each scene.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneMeta<S> {
    pub seed: u64,
    pub hand_scale: S,
    pub mesh_pitch: S,
    pub spec: HandProxySpec<S>,
    pub occluder: Option<Occluder<S>>,
}

/// Knobs for [`generate_scene`] that are not per-hand.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneOptions<S> {
    /// Marching-cubes pitch for the capsule-union remesh, mm.
    pub mesh_pitch: S,
    /// Probability of adding a sphere occluder in front of the hand.
    pub occluder_prob: S,
}

impl<S: Real> Default for SceneOptions<S> {
    fn default() -> Self {
        Self {
            mesh_pitch: rl(3.0),
            occluder_prob: S::zero(),
        }
    }
}

fn sample_occluder<S: Real>(
    rng: &mut ChaCha8Rng,
    joints: &JointSet<S>,
    cam: &CameraIntrinsics<S>,
) -> Result<Option<Occluder<S>>> {
    let min_z = joints
        .joints
        .iter()
        .map(|j| j.z.to_f64())
        .fold(f64::INFINITY, f64::min);
    let radius = rng.gen_range(18.0..40.0);
    // Place the sphere on a ray near the hand's projected centroid, at a
    // depth strictly between the camera and the hand.
    let centroid = {
        let mut acc = Vec3::zero();
        for &j in &joints.joints {
            acc = acc + j;
        }
        acc / rl::<S>(joints.len() as f64)
    };
    let uv = crate::camera::project(centroid, cam)?;
    let u = uv.u.to_f64() + rng.gen_range(-18.0..18.0);
    let v = uv.v.to_f64() + rng.gen_range(-18.0..18.0);
    let z_hi = min_z - radius - 20.0;
    let z_lo = 0.45 * min_z;
    if z_hi <= z_lo.max(80.0) {
        return Ok(None);
    }
    let z = rng.gen_range(z_lo.max(80.0)..z_hi);
    let dir = Vec3::new(
        (u - cam.cx.to_f64()) / cam.fx.to_f64(),
        (v - cam.cy.to_f64()) / cam.fy.to_f64(),
        1.0,
    );
    Ok(Some(Occluder {
        center: Point3::from_f64(dir * z),
        radius: rl(radius),
    }))
}

/// Builds the complete scene for one hand spec: FK joints, the remeshed
/// capsule union, the rendered image and silhouette mask. The seed only
/// drives occluder sampling; geometry is a pure function of the spec.
pub fn generate_scene<S: Real>(
    spec: &HandProxySpec<S>,
    cam: &CameraIntrinsics<S>,
    seed: u64,
    options: &SceneOptions<S>,
) -> Result<SceneRecord<S>> {
    let joints = spec.joints()?;
    let mesh = crate::hand::mesh_hand(spec, options.mesh_pitch)?;

    // Behind-camera or near-plane violations make projection meaningless.
    let (lo, _) = mesh.bounds();
    if lo.z <= S::zero() {
        return Err(Error::InvalidPlacement(format!(
            "hand extends behind the camera (min z = {})",
            lo.z.to_f64()
        )));
    }

    // The mesh is the ground truth downstream; joints must be strictly
    // interior so every joint ball holds near-surface voters.
    let sdf = MeshSdf::new(mesh)?;
    for (t, &j) in joints.joints.iter().enumerate() {
        if sdf.signed_distance(j) >= S::zero() {
            return Err(Error::InvalidPlacement(format!(
                "joint {t} is not strictly inside the meshed hand"
            )));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let occluder = if rng.gen_range(0.0..1.0) < options.occluder_prob.to_f64() {
        sample_occluder(&mut rng, &joints, cam)?
    } else {
        None
    };

    let bvh = TriBvh::build(sdf.mesh());
    let (image, mask) = render_scene(sdf.mesh(), &bvh, cam, occluder.as_ref());
    let hand_scale = spec.hand_scale();
    Ok(SceneRecord {
        image,
        mask,
        mesh: sdf.into_mesh(),
        joints,
        cam: *cam,
        hand_scale,
        meta: SceneMeta {
            seed,
            hand_scale,
            mesh_pitch: options.mesh_pitch,
            spec: spec.clone(),
            occluder,
        },
    })
}

/// Randomization ranges for dataset generation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneRandomization<S> {
    /// Joint-centroid depth range, mm; kept inside the frustum with margin.
    pub z_range: (S, S),
    /// Uniform hand size multiplier range.
    pub scale_range: (S, S),
    /// Upper bound on per-joint flexion draws, radians.
    pub max_flexion: S,
    /// Symmetric MCP abduction bound, radians; kept below the anatomical
    /// limit so neighboring fingers cannot graze tangentially.
    pub max_abduction: S,
}

impl<S: Real> Default for SceneRandomization<S> {
    fn default() -> Self {
        Self {
            z_range: (rl(400.0), rl(800.0)),
            scale_range: (rl(0.8), rl(1.25)),
            max_flexion: rl(std::f64::consts::FRAC_PI_2),
            max_abduction: rl(std::f64::consts::PI / 12.0),
        }
    }
}

/// Draws one hand spec. Finger curls are correlated across the three
/// articulating joints so poses look hand-like rather than tangled.
pub fn random_hand_spec<S: Real>(
    rng: &mut ChaCha8Rng,
    ranges: &SceneRandomization<S>,
    cam: &CameraIntrinsics<S>,
) -> Result<HandProxySpec<S>> {
    let mut spec = HandProxySpec::<S>::default();
    spec.scale = rl(rng.gen_range(ranges.scale_range.0.to_f64()..ranges.scale_range.1.to_f64()));

    let max_flex = ranges.max_flexion.to_f64();
    let max_abd = ranges.max_abduction.to_f64();
    for f in 0..FINGER_COUNT {
        let curl = rng.gen_range(0.0..1.0);
        for b in 1..BONES_PER_FINGER {
            let j = joint_index(f, b - 1);
            spec.flexion[j] = rl(curl * rng.gen_range(0.25..1.0) * max_flex);
        }
        spec.abduction[joint_index(f, 0)] = rl(rng.gen_range(-max_abd..max_abd));
    }

    // Uniform random axis, moderate angle; full orientation coverage is not
    // required, varied viewpoints are.
    let axis = loop {
        let v = Vec3::new(
            rng.gen_range(-1.0..1.0f64),
            rng.gen_range(-1.0..1.0),
            rng.gen_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            break v / n;
        }
    };
    let angle = rng.gen_range(0.0..std::f64::consts::PI);
    spec.rotation = Vec3::from_f64(axis * angle);

    // Aim the joint centroid at a random pixel in the central half of the
    // image at a random depth, then solve for the wrist translation.
    let zc = rng.gen_range(ranges.z_range.0.to_f64()..ranges.z_range.1.to_f64());
    let u = rng.gen_range(0.30 * cam.width as f64..0.70 * cam.width as f64);
    let v = rng.gen_range(0.30 * cam.height as f64..0.70 * cam.height as f64);
    let target = Vec3::new(
        (u - cam.cx.to_f64()) / cam.fx.to_f64() * zc,
        (v - cam.cy.to_f64()) / cam.fy.to_f64() * zc,
        zc,
    );

    spec.translation = Vec3::zero();
    let centroid_at_origin = {
        let joints = spec.joints()?;
        let mut acc = Vec3::zero();
        for &j in &joints.joints {
            acc = acc + j;
        }
        (acc / rl::<S>(JOINT_COUNT as f64)).to_f64()
    };
    spec.translation = Vec3::from_f64(target - centroid_at_origin);
    Ok(spec)
}

/// Generates `n` scenes seeded `base_seed + i`. Disjoint base seeds give
/// disjoint train/eval splits.
pub fn generate_dataset<S: Real>(
    n: usize,
    ranges: &SceneRandomization<S>,
    cam: &CameraIntrinsics<S>,
    base_seed: u64,
    options: &SceneOptions<S>,
) -> Result<Vec<SceneRecord<S>>> {
    if n == 0 {
        return Err(Error::Config("dataset size must be at least 1".into()));
    }
    (0..n)
        .map(|i| {
            let seed = base_seed.wrapping_add(i as u64);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let spec = random_hand_spec(&mut rng, ranges, cam)?;
            generate_scene(&spec, cam, seed, options)
        })
        .collect()
}

pub fn scene_dir_name(index: usize) -> String {
    format!("scene_{index:05}")
}

/// Writes one scene directory: image.ppm, mask.pbm, mesh.obj, joints.json,
/// camera.json, meta.json.
pub fn write_scene_dir<S: Real>(dir: &Path, record: &SceneRecord<S>) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    write_ppm(&record.image, dir.join("image.ppm"))?;
    write_pbm(&record.mask, dir.join("mask.pbm"))?;
    write_obj(&record.mesh, dir.join("mesh.obj"))?;
    write_joint_set(dir.join("joints.json"), &record.joints, Space::Camera, &[])?;
    let cam_file = std::fs::File::create(dir.join("camera.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(cam_file), &record.cam)?;
    let meta_file = std::fs::File::create(dir.join("meta.json"))?;
    serde_json::to_writer_pretty(std::io::BufWriter::new(meta_file), &record.meta)?;
    Ok(())
}

pub fn read_scene_dir<S: Real>(dir: &Path) -> Result<SceneRecord<S>> {
    let image = read_ppm(dir.join("image.ppm"))?;
    let mask = read_pbm(dir.join("mask.pbm"))?;
    let mesh = read_obj(dir.join("mesh.obj"))?;
    let (joints, space, _) = read_joint_set(dir.join("joints.json"))?;
    if space != Space::Camera {
        return Err(Error::Dataset(format!(
            "scene joints must be camera-space, found {}",
            space.as_str()
        )));
    }
    let cam: CameraIntrinsics<S> =
        serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(
            dir.join("camera.json"),
        )?))?;
    let meta: SceneMeta<S> = serde_json::from_reader(std::io::BufReader::new(
        std::fs::File::open(dir.join("meta.json"))?,
    ))?;
    Ok(SceneRecord {
        image,
        mask,
        mesh,
        joints,
        cam,
        hand_scale: meta.hand_scale,
        meta,
    })
}

/// Writes `scene_%05d` subdirectories under `dir`.
pub fn write_dataset<S: Real>(dir: &Path, records: &[SceneRecord<S>]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, record) in records.iter().enumerate() {
        write_scene_dir(&dir.join(scene_dir_name(i)), record)?;
    }
    Ok(())
}

/// Lists scene directories under `dir` in index order.
pub fn list_scene_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.is_dir()
                && p.file_name()
                    .and_then(|n| n.to_str())
                    .is_some_and(|n| n.starts_with("scene_"))
        })
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Dataset(format!(
            "no scene_* directories under {}",
            dir.display()
        )));
    }
    Ok(dirs)
}

pub fn read_dataset<S: Real>(dir: &Path) -> Result<Vec<SceneRecord<S>>> {
    list_scene_dirs(dir)?
        .iter()
        .map(|d| read_scene_dir(d))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_scene_is_consistent() {
        let cam = reference_camera::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        let spec = random_hand_spec(&mut rng, &SceneRandomization::default(), &cam).unwrap();
        let rec = generate_scene(&spec, &cam, 40, &SceneOptions::default()).unwrap();

        assert!(rec.mesh.is_watertight());
        assert_eq!(rec.joints.len(), JOINT_COUNT);
        assert_eq!(rec.hand_scale, spec.hand_scale());
        assert!(rec.mask.foreground_count() > 50);

        // Centroid depth stays within the randomization range.
        let zc: f64 =
            rec.joints.joints.iter().map(|j| j.z).sum::<f64>() / JOINT_COUNT as f64;
        assert!((400.0..800.0).contains(&zc));
    }

    #[test]
    fn scene_dir_round_trip_preserves_everything() {
        let dir = std::env::temp_dir().join("nvf_scene_io_test");
        std::fs::remove_dir_all(&dir).ok();
        let cam = reference_camera::<f64>();
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let spec = random_hand_spec(&mut rng, &SceneRandomization::default(), &cam).unwrap();
        let rec = generate_scene(&spec, &cam, 41, &SceneOptions::default()).unwrap();

        write_scene_dir(&dir, &rec).unwrap();
        let back: SceneRecord<f64> = read_scene_dir(&dir).unwrap();
        assert_eq!(back.image, rec.image);
        assert_eq!(back.mask, rec.mask);
        assert_eq!(back.mesh.vertices.len(), rec.mesh.vertices.len());
        assert_eq!(back.mesh.faces, rec.mesh.faces);
        for (a, b) in back.joints.joints.iter().zip(&rec.joints.joints) {
            assert!((* a - *b).norm() < 1e-9);
        }
        assert_eq!(back.hand_scale, rec.hand_scale);
        assert_eq!(back.meta.seed, 41);
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn dataset_generation_is_reproducible() {
        let cam = reference_camera::<f64>();
        let ranges = SceneRandomization::default();
        let opts = SceneOptions::default();
        let a = generate_dataset(3, &ranges, &cam, 100, &opts).unwrap();
        let b = generate_dataset(3, &ranges, &cam, 100, &opts).unwrap();
        for (ra, rb) in a.iter().zip(&b) {
            assert_eq!(ra.image, rb.image);
            assert_eq!(ra.mesh.vertices, rb.mesh.vertices);
            assert_eq!(
                ra.joints.joints, rb.joints.joints,
            );
        }
        // Different seeds give different scenes.
        let c = generate_dataset(1, &ranges, &cam, 999, &opts).unwrap();
        assert_ne!(c[0].image, a[0].image);
    }

    #[test]
    fn behind_camera_placement_is_rejected() {
        let mut spec = HandProxySpec::<f64>::default();
        spec.translation = Vec3::new(0.0, 0.0, -50.0);
        let cam = reference_camera::<f64>();
        assert!(matches!(
            generate_scene(&spec, &cam, 0, &SceneOptions::default()),
            Err(Error::InvalidPlacement(_))
        ));
    }

    #[test]
    fn occluder_changes_image_but_not_mask_or_geometry() {
        let cam = reference_camera::<f64>();
        let spec = HandProxySpec::<f64>::default();
        let plain = generate_scene(&spec, &cam, 7, &SceneOptions::default()).unwrap();
        let occluded = generate_scene(
            &spec,
            &cam,
            7,
            &SceneOptions {
                occluder_prob: 1.0,
                ..SceneOptions::default()
            },
        )
        .unwrap();
        assert!(occluded.meta.occluder.is_some());
        assert_eq!(plain.mask, occluded.mask);
        assert_eq!(plain.mesh.vertices, occluded.mesh.vertices);
        assert_ne!(plain.image, occluded.image);
    }
}
