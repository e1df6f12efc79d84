//! Marching Cubes iso-surface extraction from a signed-distance grid.
//!
//! The 256-entry case table is generated once by walking contour loops on
//! the cell boundary: marching-squares segments on each face (ambiguous
//! faces always separate the inside corners) chain into closed loops that
//! are fan-triangulated. Because the face rule depends only on shared face
//! values, neighbouring cells always agree and the output is crack-free.
//! Triangles wind so normals point toward positive values.

use std::collections::HashMap;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::math::Point3;
use crate::mesh::TriMesh;
use crate::scalar::{rl, Real};

/// Unit-cell corner offsets, standard numbering: 0..3 on the z=0 face
/// counter-clockwise, 4..7 above them.
const CORNERS: [[usize; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// The 12 cell edges as corner pairs.
const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Cell faces as corner cycles, counter-clockwise seen from outside the
/// cell. The loop-walking orientation rule depends on this ordering.
const FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1], // z = 0
    [4, 5, 6, 7], // z = 1
    [0, 1, 5, 4], // y = 0
    [3, 7, 6, 2], // y = 1
    [0, 4, 7, 3], // x = 0
    [1, 2, 6, 5], // x = 1
];

fn edge_index(a: usize, b: usize) -> u8 {
    for (i, &(p, q)) in EDGES.iter().enumerate() {
        if (p, q) == (a, b) || (p, q) == (b, a) {
            return i as u8;
        }
    }
    unreachable!("corner pair is not a cell edge");
}

/// Triangles (as cut-edge index triples) for one inside/outside corner
/// configuration.
fn triangulate_config(config: u8) -> Vec<[u8; 3]> {
    let inside = |c: usize| config >> c & 1 == 1;

    // Directed contour segments: next[from] = to over cut edges. Each face
    // contributes one segment per maximal cyclic arc of inside corners: from
    // the cut edge entering the arc to the cut edge leaving it.
    let mut next = [u8::MAX; 12];
    for face in &FACES {
        let ins: Vec<bool> = face.iter().map(|&c| inside(c)).collect();
        if ins.iter().all(|&b| b) || !ins.iter().any(|&b| b) {
            continue;
        }
        for k in 0..4 {
            if ins[k] && !ins[(k + 3) % 4] {
                // Arc starts at corner k; find where it ends.
                let mut m = k;
                while ins[(m + 1) % 4] {
                    m = (m + 1) % 4;
                }
                let from = edge_index(face[(k + 3) % 4], face[k]);
                let to = edge_index(face[m], face[(m + 1) % 4]);
                next[from as usize] = to;
            }
        }
    }

    // Chain segments into loops, starting each at its smallest cut edge.
    let mut triangles = Vec::new();
    let mut used = [false; 12];
    for start in 0..12u8 {
        if next[start as usize] == u8::MAX || used[start as usize] {
            continue;
        }
        let mut ring = vec![start];
        used[start as usize] = true;
        let mut cur = next[start as usize];
        while cur != start {
            ring.push(cur);
            used[cur as usize] = true;
            cur = next[cur as usize];
        }
        for i in 1..ring.len() - 1 {
            triangles.push([ring[0], ring[i], ring[i + 1]]);
        }
    }
    triangles
}

fn case_table() -> &'static [Vec<[u8; 3]>; 256] {
    static TABLE: OnceLock<[Vec<[u8; 3]>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(|c| triangulate_config(c as u8)))
}

/// Regular scalar grid of signed distances; values laid out x-fastest.
#[derive(Debug, Clone)]
pub struct ScalarGrid<S> {
    pub origin: Point3<S>,
    pub pitch: S,
    pub dims: [usize; 3],
    pub values: Vec<S>,
}

impl<S: Real> ScalarGrid<S> {
    pub fn new(origin: Point3<S>, pitch: S, dims: [usize; 3], values: Vec<S>) -> Result<Self> {
        if dims.iter().any(|&d| d < 2) || !(pitch > S::zero()) {
            return Err(Error::ShapeError(format!(
                "scalar grid needs dims >= 2 and positive pitch, got {dims:?} at {pitch}"
            )));
        }
        if values.len() != dims[0] * dims[1] * dims[2] {
            return Err(Error::ShapeError(format!(
                "grid value count {} does not match dims {dims:?}",
                values.len()
            )));
        }
        Ok(Self {
            origin,
            pitch,
            dims,
            values,
        })
    }

    /// Fills the grid by evaluating `f` at every lattice position.
    pub fn from_fn<F>(origin: Point3<S>, pitch: S, dims: [usize; 3], f: F) -> Result<Self>
    where
        F: Fn(Point3<S>) -> S + Sync,
    {
        let [nx, ny, nz] = dims;
        let values: Vec<S> = (0..nz)
            .into_par_iter()
            .flat_map_iter(|iz| {
                let f = &f;
                (0..ny).flat_map(move |iy| {
                    (0..nx).map(move |ix| {
                        f(Point3::new(
                            origin.x + pitch * rl(ix as f64),
                            origin.y + pitch * rl(iy as f64),
                            origin.z + pitch * rl(iz as f64),
                        ))
                    })
                })
            })
            .collect();
        Self::new(origin, pitch, dims, values)
    }

    #[inline]
    pub fn value(&self, ix: usize, iy: usize, iz: usize) -> S {
        self.values[ix + self.dims[0] * (iy + self.dims[1] * iz)]
    }

    #[inline]
    pub fn position(&self, ix: usize, iy: usize, iz: usize) -> Point3<S> {
        Point3::new(
            self.origin.x + self.pitch * rl(ix as f64),
            self.origin.y + self.pitch * rl(iy as f64),
            self.origin.z + self.pitch * rl(iz as f64),
        )
    }
}

/// Extracts the iso-surface as an indexed triangle mesh. Grid values exactly
/// equal to iso are nudged by +1e-9 before case lookup, so interpolation
/// parameters are strictly interior and no zero-area triangles appear.
/// A grid with no sign change yields an empty mesh.
pub fn marching_cubes<S: Real>(grid: &ScalarGrid<S>, iso: S) -> Result<TriMesh<S>> {
    let [nx, ny, nz] = grid.dims;
    let nudge = rl::<S>(1e-9);
    let fetch = |ix: usize, iy: usize, iz: usize| -> S {
        let v = grid.value(ix, iy, iz);
        if v == iso {
            v + nudge
        } else {
            v
        }
    };

    // Per-slab triangle soup, generated in parallel but concatenated in a
    // fixed order so the weld (and thus the output) is deterministic. Each
    // cut vertex carries the lattice edge it sits on; the interpolation runs
    // in canonical (ascending lattice id) direction so the two cells sharing
    // an edge compute bit-identical positions in any precision.
    let lattice_id = |c: [usize; 3]| -> u64 { (c[0] + nx * (c[1] + ny * c[2])) as u64 };
    let slabs: Vec<Vec<[((u64, u64), Point3<S>); 3]>> = (0..nz.saturating_sub(1))
        .into_par_iter()
        .map(|iz| {
            let table = case_table();
            let mut tris = Vec::new();
            for iy in 0..ny - 1 {
                for ix in 0..nx - 1 {
                    let mut vals = [S::zero(); 8];
                    let mut pos = [Point3::zero(); 8];
                    let mut lids = [0u64; 8];
                    let mut config = 0u8;
                    for (c, off) in CORNERS.iter().enumerate() {
                        let corner = [ix + off[0], iy + off[1], iz + off[2]];
                        vals[c] = fetch(corner[0], corner[1], corner[2]);
                        pos[c] = grid.position(corner[0], corner[1], corner[2]);
                        lids[c] = lattice_id(corner);
                        if vals[c] < iso {
                            config |= 1 << c;
                        }
                    }
                    if config == 0 || config == 255 {
                        continue;
                    }
                    let cut = |e: u8| -> ((u64, u64), Point3<S>) {
                        let (mut a, mut b) = EDGES[e as usize];
                        if lids[a] > lids[b] {
                            std::mem::swap(&mut a, &mut b);
                        }
                        let t = (iso - vals[a]) / (vals[b] - vals[a]);
                        ((lids[a], lids[b]), pos[a] + (pos[b] - pos[a]) * t)
                    };
                    for tri in &table[config as usize] {
                        tris.push([cut(tri[0]), cut(tri[1]), cut(tri[2])]);
                    }
                }
            }
            tris
        })
        .collect();

    // Weld vertices by their lattice edge: exact topological identity, no
    // quantization.
    let mut vertex_ids: HashMap<(u64, u64), u32> = HashMap::new();
    let mut vertices: Vec<Point3<S>> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for tri in slabs.iter().flatten() {
        let ids = tri.map(|(edge, p)| {
            *vertex_ids.entry(edge).or_insert_with(|| {
                vertices.push(p);
                (vertices.len() - 1) as u32
            })
        });
        if ids[0] != ids[1] && ids[1] != ids[2] && ids[0] != ids[2] {
            faces.push(ids);
        }
    }

    if faces.is_empty() {
        return Ok(TriMesh::empty());
    }
    TriMesh::new(vertices, faces)
}
