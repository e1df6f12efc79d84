//! Pinhole camera model and frustum containment tests.

use crate::error::{Error, Result};
use crate::math::Point3;
use crate::scalar::{rl, Real};
use serde::{Deserialize, Serialize};

/// Pinhole intrinsics. Focal lengths and principal point are in pixels,
/// image size in whole pixels. fx, fy > 0 and the principal point lies
/// inside the image.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CameraIntrinsics<S> {
    pub fx: S,
    pub fy: S,
    pub cx: S,
    pub cy: S,
    pub width: u32,
    pub height: u32,
}

/// Continuous (unrounded) pixel coordinates plus an in-image flag.
/// Out-of-image projections are flagged rather than rejected; callers
/// choose their own boundary policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PixelUV<S> {
    pub u: S,
    pub v: S,
    pub in_image: bool,
}

impl<S: Real> CameraIntrinsics<S> {
    pub fn new(fx: S, fy: S, cx: S, cy: S, width: u32, height: u32) -> Self {
        Self {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        }
    }

    pub fn cast<T: Real>(&self) -> CameraIntrinsics<T> {
        CameraIntrinsics {
            fx: rl(self.fx.to_f64()),
            fy: rl(self.fy.to_f64()),
            cx: rl(self.cx.to_f64()),
            cy: rl(self.cy.to_f64()),
            width: self.width,
            height: self.height,
        }
    }
}

/// Projects a camera-frame point to continuous pixel coordinates:
/// u = fx*x/z + cx, v = fy*y/z + cy. Depth must be strictly positive.
pub fn project<S: Real>(p: Point3<S>, cam: &CameraIntrinsics<S>) -> Result<PixelUV<S>> {
    if p.z <= S::zero() {
        return Err(Error::DegenerateProjection { z: p.z.to_f64() });
    }
    let u = cam.fx * p.x / p.z + cam.cx;
    let v = cam.fy * p.y / p.z + cam.cy;
    let w = rl::<S>(cam.width as f64);
    let h = rl::<S>(cam.height as f64);
    let in_image = u >= S::zero() && u < w && v >= S::zero() && v < h;
    Ok(PixelUV { u, v, in_image })
}

/// True iff z lies in [z_near, z_far] and the projection lands inside
/// [0,width) x [0,height). The pixel bounds are half-open.
pub fn frustum_contains<S: Real>(
    p: Point3<S>,
    cam: &CameraIntrinsics<S>,
    z_near: S,
    z_far: S,
) -> bool {
    if p.z < z_near || p.z > z_far {
        return false;
    }
    match project(p, cam) {
        Ok(uv) => uv.in_image,
        Err(_) => false,
    }
}

/// A pinhole frustum between two depth planes.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Frustum<S> {
    pub cam: CameraIntrinsics<S>,
    pub z_near: S,
    pub z_far: S,
}

impl<S: Real> Frustum<S> {
    pub fn contains(&self, p: Point3<S>) -> bool {
        frustum_contains(p, &self.cam, self.z_near, self.z_far)
    }

    /// Tight axis-aligned bounds of the frustum volume.
    pub fn aabb(&self) -> (Point3<S>, Point3<S>) {
        let mut lo = Point3::splat(S::infinity());
        let mut hi = Point3::splat(S::neg_infinity());
        for z in [self.z_near, self.z_far] {
            let x0 = (S::zero() - self.cam.cx) * z / self.cam.fx;
            let x1 = (rl::<S>(self.cam.width as f64) - self.cam.cx) * z / self.cam.fx;
            let y0 = (S::zero() - self.cam.cy) * z / self.cam.fy;
            let y1 = (rl::<S>(self.cam.height as f64) - self.cam.cy) * z / self.cam.fy;
            for p in [
                Point3::new(x0, y0, z),
                Point3::new(x1, y1, z),
            ] {
                lo = lo.min_by_component(p);
                hi = hi.max_by_component(p);
            }
        }
        (lo, hi)
    }

    /// Volume centroid of the frustum; the fallback joint position when
    /// voting fails. Cross-section area grows as z^2, so the depth centroid
    /// is 3/4 * (zf^4 - zn^4) / (zf^3 - zn^3).
    pub fn centroid(&self) -> Point3<S> {
        let (zn, zf) = (self.z_near, self.z_far);
        let zn3 = zn * zn * zn;
        let zf3 = zf * zf * zf;
        let z = rl::<S>(0.75) * (zf3 * zf - zn3 * zn) / (zf3 - zn3);
        let x = (rl::<S>(self.cam.width as f64 / 2.0) - self.cam.cx) * z / self.cam.fx;
        let y = (rl::<S>(self.cam.height as f64 / 2.0) - self.cam.cy) * z / self.cam.fy;
        Point3::new(x, y, z)
    }

    pub fn cast<T: Real>(&self) -> Frustum<T> {
        Frustum {
            cam: self.cam.cast(),
            z_near: rl(self.z_near.to_f64()),
            z_far: rl(self.z_far.to_f64()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::Vec3;

    fn cam112() -> CameraIntrinsics<f64> {
        CameraIntrinsics::new(1000.0, 1000.0, 112.0, 112.0, 224, 224)
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let uv = project(Vec3::new(0.0, 0.0, 500.0), &cam112()).unwrap();
        assert_eq!((uv.u, uv.v), (112.0, 112.0));
        assert!(uv.in_image);
    }

    #[test]
    fn pinhole_arithmetic() {
        let uv = project(Vec3::new(100.0, 0.0, 1000.0), &cam112()).unwrap();
        assert_eq!(uv.u, 212.0);
    }

    #[test]
    fn out_of_image_is_flagged_not_rejected() {
        let cam = CameraIntrinsics::new(500.0, 500.0, 64.0, 64.0, 128, 128);
        let uv = project(Vec3::new(50.0, -50.0, 250.0), &cam).unwrap();
        assert_eq!((uv.u, uv.v), (164.0, -36.0));
        assert!(!uv.in_image);
    }

    #[test]
    fn non_positive_depth_is_degenerate() {
        assert!(project(Vec3::new(0.0, 0.0, 0.0), &cam112()).is_err());
        assert!(project(Vec3::new(0.0, 0.0, -5.0), &cam112()).is_err());
    }

    #[test]
    fn projection_is_scale_covariant() {
        let cam = cam112();
        let p = Vec3::new(31.0, -47.0, 613.0);
        let a = project(p, &cam).unwrap();
        for lambda in [0.25, 2.0, 17.5] {
            let b = project(p * lambda, &cam).unwrap();
            assert!((a.u - b.u).abs() < 1e-9 && (a.v - b.v).abs() < 1e-9);
        }
    }

    #[test]
    fn frustum_bounds() {
        let cam = cam112();
        let (zn, zf) = (300.0, 1000.0);
        assert!(frustum_contains(
            Vec3::new(0.0, 0.0, (zn + zf) / 2.0),
            &cam,
            zn,
            zf
        ));
        assert!(!frustum_contains(Vec3::new(0.0, 0.0, zf + 1.0), &cam, zn, zf));
        // u = fx*x/z + cx = width exactly: half-open bound excludes it.
        let z = 500.0;
        let x = (224.0 - 112.0) * z / 1000.0;
        assert!(!frustum_contains(Vec3::new(x, 0.0, z), &cam, zn, zf));
        assert!(frustum_contains(Vec3::new(x - 1e-6, 0.0, z), &cam, zn, zf));
    }
}
