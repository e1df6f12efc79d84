//! Signed distance to a watertight triangle mesh.
//!
//! Magnitude is the exact Euclidean distance to the nearest surface point
//! (BVH-accelerated). The sign comes from the angle-weighted pseudonormal of
//! the closest feature (face interior, edge, or vertex): negative inside,
//! positive outside.

use crate::bvh::{NearestHit, TriBvh};
use crate::error::Result;
use crate::mesh::TriMesh;
use crate::math::Point3;
use crate::scalar::{rl, Real};

/// Barycentric coordinates this close to zero classify the closest point as
/// lying on an edge or vertex rather than the face interior.
const FEATURE_EPS: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct MeshSdf<S> {
    mesh: TriMesh<S>,
    bvh: TriBvh<S>,
}

impl<S: Real> MeshSdf<S> {
    /// Fails with `IllFormedMesh` unless the mesh is watertight with
    /// consistent winding; the sign is undefined otherwise.
    pub fn new(mesh: TriMesh<S>) -> Result<Self> {
        if mesh.is_geometry_empty() {
            return Err(crate::error::Error::IllFormedMesh(
                "cannot query signed distance of an empty mesh".into(),
            ));
        }
        mesh.require_watertight()?;
        let bvh = TriBvh::build(&mesh);
        Ok(Self { mesh, bvh })
    }

    pub fn mesh(&self) -> &TriMesh<S> {
        &self.mesh
    }

    pub fn into_mesh(self) -> TriMesh<S> {
        self.mesh
    }

    pub fn bvh(&self) -> &TriBvh<S> {
        &self.bvh
    }

    pub fn nearest(&self, p: Point3<S>) -> NearestHit<S> {
        self.bvh.nearest(p)
    }

    /// Signed distance in millimetres; zero exactly on the surface.
    pub fn signed_distance(&self, p: Point3<S>) -> S {
        let hit = self.nearest(p);
        let dist = hit.dist_sq.sqrt();
        if dist == S::zero() {
            return S::zero();
        }
        let n = self.feature_pseudonormal(&hit);
        if n.dot(p - hit.point) >= S::zero() {
            dist
        } else {
            -dist
        }
    }

    pub fn contains(&self, p: Point3<S>) -> bool {
        self.signed_distance(p) < S::zero()
    }

    /// Pseudonormal of the feature the closest point lies on.
    fn feature_pseudonormal(&self, hit: &NearestHit<S>) -> Point3<S> {
        let eps = rl::<S>(FEATURE_EPS);
        let f = self.mesh.faces[hit.face as usize];
        let near_zero = [
            hit.bary[0] <= eps,
            hit.bary[1] <= eps,
            hit.bary[2] <= eps,
        ];
        match near_zero.iter().filter(|&&z| z).count() {
            0 => self.mesh.face_normals[hit.face as usize],
            1 => {
                // On the edge opposite the vanished coordinate.
                let k = near_zero.iter().position(|&z| z).unwrap();
                let (i, j) = (f[(k + 1) % 3], f[(k + 2) % 3]);
                let key = if i < j { (i, j) } else { (j, i) };
                self.mesh
                    .edge_pseudonormals
                    .get(&key)
                    .copied()
                    .unwrap_or(self.mesh.face_normals[hit.face as usize])
            }
            _ => {
                // Two coordinates vanished: on the remaining vertex.
                let k = near_zero.iter().position(|&z| !z).unwrap();
                self.mesh.vertex_pseudonormals[f[k] as usize]
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::math::{closest_point_on_triangle, Vec3};
    use crate::mesh::icosphere;

    #[test]
    fn surface_vertex_has_zero_distance() {
        let sdf = MeshSdf::new(icosphere(100.0f64, 1)).unwrap();
        let v = sdf.mesh().vertices[5];
        assert_eq!(sdf.signed_distance(v), 0.0);
    }

    #[test]
    fn icosphere_centroid_matches_discrete_inradius() {
        let mesh = icosphere(100.0f64, 1);
        // Oracle: exhaustive scan over every triangle from the centre.
        let mut inradius = f64::INFINITY;
        for fi in 0..mesh.faces.len() {
            let (a, b, c) = mesh.face_points(fi);
            let (q, _) = closest_point_on_triangle(Vec3::zero(), a, b, c);
            inradius = inradius.min(q.norm());
        }
        assert!(inradius < 100.0);
        let sdf = MeshSdf::new(mesh).unwrap();
        let s = sdf.signed_distance(Vec3::zero());
        assert!(s < 0.0, "centre of a sphere is inside");
        assert!((s.abs() - inradius).abs() < 1e-6);
    }

    #[test]
    fn outside_point_matches_brute_force() {
        let mesh = icosphere(100.0f64, 1);
        let p = Vec3::new(200.0, 0.0, 0.0);
        let mut best = f64::INFINITY;
        for fi in 0..mesh.faces.len() {
            let (a, b, c) = mesh.face_points(fi);
            let (q, _) = closest_point_on_triangle(p, a, b, c);
            best = best.min(p.dist(q));
        }
        let sdf = MeshSdf::new(mesh).unwrap();
        let s = sdf.signed_distance(p);
        assert!(s > 0.0);
        assert!((s - best).abs() < 1e-6);
    }

    #[test]
    fn non_watertight_mesh_is_rejected() {
        let full = icosphere(50.0f64, 0);
        let open = TriMesh::new(full.vertices.clone(), full.faces[1..].to_vec()).unwrap();
        assert!(MeshSdf::new(open).is_err());
    }

    #[test]
    fn translation_invariance() {
        let mesh = icosphere(80.0f64, 1);
        let sdf = MeshSdf::new(mesh.clone()).unwrap();
        let t = Vec3::new(123.0, -456.0, 789.0);
        let sdf_t = MeshSdf::new(mesh.translated(t)).unwrap();
        for p in [
            Vec3::new(10.0, 20.0, 30.0),
            Vec3::new(-90.0, 0.0, 0.0),
            Vec3::new(0.0, 150.0, -20.0),
        ] {
            let a = sdf.signed_distance(p);
            let b = sdf_t.signed_distance(p + t);
            assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }
    }
}
