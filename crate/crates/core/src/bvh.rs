//! Axis-aligned BVH over mesh triangles for nearest-point and ray queries.
//!
//! The tree is immutable after construction; all queries take `&self` and
//! are safe to run concurrently.

use crate::math::{closest_point_on_triangle, ray_triangle_intersect, Point3, Vec3};
use crate::mesh::TriMesh;
use crate::scalar::{rl, Real};

const LEAF_SIZE: usize = 4;

#[derive(Debug, Clone)]
struct Node<S> {
    lo: Vec3<S>,
    hi: Vec3<S>,
    /// Leaf: range [start, start+count) into `order`. Inner: count == 0 and
    /// children at (left, right).
    left: u32,
    right: u32,
    start: u32,
    count: u32,
}

#[derive(Debug, Clone)]
pub struct TriBvh<S> {
    nodes: Vec<Node<S>>,
    /// Triangle indices permuted so leaves own contiguous ranges.
    order: Vec<u32>,
    tris: Vec<[Vec3<S>; 3]>,
}

/// Nearest-surface query result.
#[derive(Debug, Clone, Copy)]
pub struct NearestHit<S> {
    pub face: u32,
    pub point: Point3<S>,
    pub dist_sq: S,
    /// Barycentric coordinates of the closest point on that face.
    pub bary: [S; 3],
}

/// First ray intersection.
#[derive(Debug, Clone, Copy)]
pub struct RayHit<S> {
    pub face: u32,
    pub t: S,
    pub u: S,
    pub v: S,
}

fn aabb_dist_sq<S: Real>(p: Vec3<S>, lo: Vec3<S>, hi: Vec3<S>) -> S {
    let mut acc = S::zero();
    for axis in 0..3 {
        let (v, l, h) = (p.component(axis), lo.component(axis), hi.component(axis));
        let d = if v < l {
            l - v
        } else if v > h {
            v - h
        } else {
            S::zero()
        };
        acc += d * d;
    }
    acc
}

/// Slab test: does the ray origin+t*dir intersect the box for any t >= 0?
fn ray_hits_aabb<S: Real>(origin: Vec3<S>, inv_dir: Vec3<S>, lo: Vec3<S>, hi: Vec3<S>) -> bool {
    let mut t_enter = S::zero();
    let mut t_exit = S::infinity();
    for axis in 0..3 {
        let o = origin.component(axis);
        let inv = inv_dir.component(axis);
        let (l, h) = (lo.component(axis), hi.component(axis));
        if inv.is_infinite() {
            if o < l || o > h {
                return false;
            }
            continue;
        }
        let t0 = (l - o) * inv;
        let t1 = (h - o) * inv;
        let (t0, t1) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        t_enter = t_enter.max(t0);
        t_exit = t_exit.min(t1);
        if t_enter > t_exit {
            return false;
        }
    }
    true
}

impl<S: Real> TriBvh<S> {
    pub fn build(mesh: &TriMesh<S>) -> Self {
        let tris: Vec<[Vec3<S>; 3]> = (0..mesh.faces.len())
            .map(|fi| {
                let (a, b, c) = mesh.face_points(fi);
                [a, b, c]
            })
            .collect();
        let centroids: Vec<Vec3<S>> = tris
            .iter()
            .map(|t| (t[0] + t[1] + t[2]) / rl(3.0))
            .collect();
        let mut order: Vec<u32> = (0..tris.len() as u32).collect();
        let mut nodes = Vec::new();
        let n = order.len();
        Self::build_node(&tris, &centroids, &mut order, &mut nodes, 0, n);
        Self { nodes, order, tris }
    }

    fn build_node(
        tris: &[[Vec3<S>; 3]],
        centroids: &[Vec3<S>],
        order: &mut [u32],
        nodes: &mut Vec<Node<S>>,
        start: usize,
        count: usize,
    ) -> u32 {
        let slot = nodes.len() as u32;
        let mut lo = Vec3::splat(S::infinity());
        let mut hi = Vec3::splat(S::neg_infinity());
        for &ti in &order[start..start + count] {
            for &v in &tris[ti as usize] {
                lo = lo.min_by_component(v);
                hi = hi.max_by_component(v);
            }
        }
        nodes.push(Node {
            lo,
            hi,
            left: 0,
            right: 0,
            start: start as u32,
            count: count as u32,
        });
        if count <= LEAF_SIZE {
            return slot;
        }

        // Split at the centroid median along the widest centroid axis; ties
        // broken by triangle index so the build is deterministic.
        let mut clo = Vec3::splat(S::infinity());
        let mut chi = Vec3::splat(S::neg_infinity());
        for &ti in &order[start..start + count] {
            clo = clo.min_by_component(centroids[ti as usize]);
            chi = chi.max_by_component(centroids[ti as usize]);
        }
        let extent = chi - clo;
        let axis = if extent.x >= extent.y && extent.x >= extent.z {
            0
        } else if extent.y >= extent.z {
            1
        } else {
            2
        };
        let mid = count / 2;
        order[start..start + count].select_nth_unstable_by(mid, |&a, &b| {
            let ca = centroids[a as usize].component(axis);
            let cb = centroids[b as usize].component(axis);
            ca.partial_cmp(&cb)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });

        let left = Self::build_node(tris, centroids, order, nodes, start, mid);
        let right = Self::build_node(tris, centroids, order, nodes, start + mid, count - mid);
        nodes[slot as usize].left = left;
        nodes[slot as usize].right = right;
        nodes[slot as usize].count = 0;
        slot
    }

    /// Closest surface point to `p` over all triangles.
    pub fn nearest(&self, p: Point3<S>) -> NearestHit<S> {
        let mut best = NearestHit {
            face: 0,
            point: self.tris[0][0],
            dist_sq: S::infinity(),
            bary: [S::one(), S::zero(), S::zero()],
        };
        self.nearest_rec(0, p, &mut best);
        best
    }

    fn nearest_rec(&self, node: u32, p: Point3<S>, best: &mut NearestHit<S>) {
        let n = &self.nodes[node as usize];
        if aabb_dist_sq(p, n.lo, n.hi) >= best.dist_sq {
            return;
        }
        if n.count > 0 {
            for &ti in &self.order[n.start as usize..(n.start + n.count) as usize] {
                let t = &self.tris[ti as usize];
                let (q, bary) = closest_point_on_triangle(p, t[0], t[1], t[2]);
                let d = p.dist_sq(q);
                // Strict improvement keeps the first (lowest traversal order)
                // face on exact ties, which keeps sign evaluation stable.
                if d < best.dist_sq {
                    *best = NearestHit {
                        face: ti,
                        point: q,
                        dist_sq: d,
                        bary,
                    };
                }
            }
            return;
        }
        let (l, r) = (n.left, n.right);
        let dl = aabb_dist_sq(p, self.nodes[l as usize].lo, self.nodes[l as usize].hi);
        let dr = aabb_dist_sq(p, self.nodes[r as usize].lo, self.nodes[r as usize].hi);
        if dl <= dr {
            self.nearest_rec(l, p, best);
            self.nearest_rec(r, p, best);
        } else {
            self.nearest_rec(r, p, best);
            self.nearest_rec(l, p, best);
        }
    }

    /// First intersection along origin + t*dir with t > t_min.
    pub fn first_hit(&self, origin: Point3<S>, dir: Vec3<S>, t_min: S) -> Option<RayHit<S>> {
        let mut best: Option<RayHit<S>> = None;
        self.for_each_ray_hit(origin, dir, t_min, &mut |ti, t, u, v| {
            if best.map_or(true, |h| t < h.t) {
                best = Some(RayHit { face: ti, t, u, v });
            }
        });
        best
    }

    /// Number of ray/triangle crossings with t > t_min; parity gives
    /// inside/outside for watertight meshes away from edges.
    pub fn count_hits(&self, origin: Point3<S>, dir: Vec3<S>, t_min: S) -> usize {
        let mut count = 0usize;
        self.for_each_ray_hit(origin, dir, t_min, &mut |_, _, _, _| count += 1);
        count
    }

    fn for_each_ray_hit<F: FnMut(u32, S, S, S)>(
        &self,
        origin: Point3<S>,
        dir: Vec3<S>,
        t_min: S,
        on_hit: &mut F,
    ) {
        let inv_dir = Vec3::new(S::one() / dir.x, S::one() / dir.y, S::one() / dir.z);
        self.ray_rec(0, origin, dir, inv_dir, t_min, on_hit);
    }

    fn ray_rec<F: FnMut(u32, S, S, S)>(
        &self,
        node: u32,
        origin: Point3<S>,
        dir: Vec3<S>,
        inv_dir: Vec3<S>,
        t_min: S,
        on_hit: &mut F,
    ) {
        let n = &self.nodes[node as usize];
        if !ray_hits_aabb(origin, inv_dir, n.lo, n.hi) {
            return;
        }
        if n.count > 0 {
            for &ti in &self.order[n.start as usize..(n.start + n.count) as usize] {
                let t = &self.tris[ti as usize];
                if let Some((tt, u, v)) =
                    ray_triangle_intersect(origin, dir, t[0], t[1], t[2], t_min)
                {
                    on_hit(ti, tt, u, v);
                }
            }
            return;
        }
        self.ray_rec(n.left, origin, dir, inv_dir, t_min, on_hit);
        self.ray_rec(n.right, origin, dir, inv_dir, t_min, on_hit);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::tetrahedron;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn brute_nearest(mesh: &TriMesh<f64>, p: Vec3<f64>) -> (u32, Vec3<f64>, f64) {
        let mut best = (0u32, Vec3::zero(), f64::INFINITY);
        for fi in 0..mesh.faces.len() {
            let (a, b, c) = mesh.face_points(fi);
            let (q, _) = closest_point_on_triangle(p, a, b, c);
            let d = p.dist_sq(q);
            if d < best.2 {
                best = (fi as u32, q, d);
            }
        }
        best
    }

    #[test]
    fn nearest_matches_brute_force() {
        let mesh = tetrahedron();
        let bvh = TriBvh::build(&mesh);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..500 {
            let p = Vec3::new(
                rng.gen_range(-150.0..250.0),
                rng.gen_range(-150.0..250.0),
                rng.gen_range(-150.0..250.0),
            );
            let hit = bvh.nearest(p);
            let (_, bq, bd) = brute_nearest(&mesh, p);
            assert!((hit.dist_sq.sqrt() - bd.sqrt()).abs() < 1e-9);
            assert!(hit.point.dist(bq) < 1e-6 || (hit.dist_sq - bd).abs() < 1e-12);
        }
    }

    #[test]
    fn ray_parity_separates_inside_from_outside() {
        let mesh = tetrahedron();
        let bvh = TriBvh::build(&mesh);
        let inside = Vec3::new(10.0, 10.0, 10.0);
        let outside = Vec3::new(200.0, 200.0, 200.0);
        let dir = Vec3::new(0.123, 0.456, 0.789).normalized_or_zero(1e-12);
        assert_eq!(bvh.count_hits(inside, dir, 0.0) % 2, 1);
        assert_eq!(bvh.count_hits(outside, dir, 0.0) % 2, 0);
    }

    #[test]
    fn first_hit_finds_entry_face() {
        let mesh = tetrahedron();
        let bvh = TriBvh::build(&mesh);
        let origin = Vec3::new(10.0, 10.0, -50.0);
        let hit = bvh.first_hit(origin, Vec3::new(0.0, 0.0, 1.0), 0.0).unwrap();
        assert!((hit.t - 50.0).abs() < 1e-9, "z=0 face should be hit at t=50");
    }
}
