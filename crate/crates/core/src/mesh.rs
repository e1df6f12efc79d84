//! Triangle meshes with angle-weighted pseudonormals, plus OBJ/PLY I/O.
//!
//! Units are millimetres throughout. Meshes used as signed-distance ground
//! truth must be watertight with consistent outward winding; construction
//! records whether that holds so queries can reject ill-formed input.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::math::{Mat3, Point3, Vec3};
use crate::scalar::{rl, Real};

/// Undirected edge key, vertex indices sorted ascending.
fn edge_key(i: u32, j: u32) -> (u32, u32) {
    if i < j {
        (i, j)
    } else {
        (j, i)
    }
}

#[derive(Debug, Clone)]
pub struct TriMesh<S> {
    pub vertices: Vec<Point3<S>>,
    pub faces: Vec<[u32; 3]>,
    /// Unit face normals, outward for consistently wound meshes.
    pub face_normals: Vec<Vec3<S>>,
    /// Angle-weighted unit vertex pseudonormals.
    pub vertex_pseudonormals: Vec<Vec3<S>>,
    /// Edge pseudonormals (sum of the two adjacent face normals, normalized),
    /// keyed by the sorted vertex pair. Only complete for watertight meshes.
    pub edge_pseudonormals: HashMap<(u32, u32), Vec3<S>>,
    watertight: bool,
}

impl<S: Real> TriMesh<S> {
    /// Builds a mesh and precomputes pseudonormals. Fails on out-of-range
    /// indices, repeated indices within a face, or exactly degenerate faces.
    pub fn new(vertices: Vec<Point3<S>>, faces: Vec<[u32; 3]>) -> Result<Self> {
        let nv = vertices.len() as u32;
        if faces.is_empty() || vertices.is_empty() {
            return Err(Error::IllFormedMesh("empty vertex or face list".into()));
        }
        for (fi, f) in faces.iter().enumerate() {
            if f[0] >= nv || f[1] >= nv || f[2] >= nv {
                return Err(Error::IllFormedMesh(format!(
                    "face {fi} references vertex out of range"
                )));
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::IllFormedMesh(format!(
                    "face {fi} repeats a vertex index"
                )));
            }
        }

        let mut face_normals = Vec::with_capacity(faces.len());
        for (fi, f) in faces.iter().enumerate() {
            let a = vertices[f[0] as usize];
            let b = vertices[f[1] as usize];
            let c = vertices[f[2] as usize];
            let n = (b - a).cross(c - a);
            let len = n.norm();
            if len.to_f64() < 1e-20 {
                return Err(Error::IllFormedMesh(format!("face {fi} has zero area")));
            }
            face_normals.push(n / len);
        }

        // Angle-weighted vertex pseudonormals.
        let mut vertex_pseudonormals = vec![Vec3::zero(); vertices.len()];
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let v = f[k] as usize;
                let p = vertices[v];
                let e1 = (vertices[f[(k + 1) % 3] as usize] - p).normalized_or_zero(rl(1e-30));
                let e2 = (vertices[f[(k + 2) % 3] as usize] - p).normalized_or_zero(rl(1e-30));
                let angle = e1.dot(e2).max(-S::one()).min(S::one()).acos();
                vertex_pseudonormals[v] = vertex_pseudonormals[v] + face_normals[fi] * angle;
            }
        }
        for n in &mut vertex_pseudonormals {
            *n = n.normalized_or_zero(rl(1e-30));
        }

        // Edge adjacency: count undirected occurrences and check that each
        // edge is used once in each direction (consistent winding).
        let mut edges: HashMap<(u32, u32), (u32, i32, Vec3<S>)> = HashMap::new();
        for (fi, f) in faces.iter().enumerate() {
            for k in 0..3 {
                let (i, j) = (f[k], f[(k + 1) % 3]);
                let dir = if i < j { 1 } else { -1 };
                let e = edges
                    .entry(edge_key(i, j))
                    .or_insert((0, 0, Vec3::zero()));
                e.0 += 1;
                e.1 += dir;
                e.2 = e.2 + face_normals[fi];
            }
        }
        let watertight = edges.values().all(|&(count, dir, _)| count == 2 && dir == 0);
        let edge_pseudonormals = edges
            .into_iter()
            .map(|(k, (_, _, sum))| (k, sum.normalized_or_zero(rl(1e-30))))
            .collect();

        Ok(Self {
            vertices,
            faces,
            face_normals,
            vertex_pseudonormals,
            edge_pseudonormals,
            watertight,
        })
    }

    /// A mesh with no geometry at all; the valid result of extracting an
    /// iso-surface from a grid with no sign change.
    pub fn empty() -> Self {
        Self {
            vertices: Vec::new(),
            faces: Vec::new(),
            face_normals: Vec::new(),
            vertex_pseudonormals: Vec::new(),
            edge_pseudonormals: HashMap::new(),
            watertight: true,
        }
    }

    pub fn is_geometry_empty(&self) -> bool {
        self.faces.is_empty()
    }

    /// True when every edge is shared by exactly two faces with opposite
    /// orientation.
    pub fn is_watertight(&self) -> bool {
        self.watertight
    }

    /// V - E + F over unique undirected edges; 2 for a closed genus-0 mesh.
    pub fn euler_characteristic(&self) -> i64 {
        self.vertices.len() as i64 - self.edge_pseudonormals.len() as i64
            + self.faces.len() as i64
    }

    /// Enclosed volume by the divergence theorem; positive for outward
    /// winding. Only meaningful for closed meshes.
    pub fn signed_volume(&self) -> S {
        let sixth = rl::<S>(1.0 / 6.0);
        let mut acc = crate::math::CompensatedSum::<S>::new();
        for fi in 0..self.faces.len() {
            let (a, b, c) = self.face_points(fi);
            acc.add(a.dot(b.cross(c)));
        }
        acc.value() * sixth
    }

    pub fn require_watertight(&self) -> Result<()> {
        if self.watertight {
            Ok(())
        } else {
            Err(Error::IllFormedMesh(
                "mesh is not watertight with consistent winding".into(),
            ))
        }
    }

    pub fn face_points(&self, fi: usize) -> (Point3<S>, Point3<S>, Point3<S>) {
        let f = self.faces[fi];
        (
            self.vertices[f[0] as usize],
            self.vertices[f[1] as usize],
            self.vertices[f[2] as usize],
        )
    }

    pub fn face_area(&self, fi: usize) -> S {
        let (a, b, c) = self.face_points(fi);
        (b - a).cross(c - a).norm() * rl(0.5)
    }

    /// Axis-aligned bounds as (min, max) corners.
    pub fn bounds(&self) -> (Point3<S>, Point3<S>) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for &v in &self.vertices[1..] {
            lo = lo.min_by_component(v);
            hi = hi.max_by_component(v);
        }
        (lo, hi)
    }

    /// Mean of the vertex positions.
    pub fn vertex_centroid(&self) -> Point3<S> {
        let inv = S::one() / rl(self.vertices.len() as f64);
        let mut acc = Vec3::zero();
        for &v in &self.vertices {
            acc = acc + v;
        }
        acc * inv
    }

    pub fn translated(&self, t: Vec3<S>) -> Self {
        let mut m = self.clone();
        for v in &mut m.vertices {
            *v = *v + t;
        }
        m
    }

    pub fn rotated(&self, r: &Mat3<S>) -> Self {
        // Rebuild so the pseudonormals stay exactly consistent with the
        // rotated vertices.
        let vertices = self.vertices.iter().map(|&v| r.apply(v)).collect();
        Self::new(vertices, self.faces.clone()).expect("rotation preserves mesh validity")
    }

    pub fn cast<T: Real>(&self) -> Result<TriMesh<T>> {
        let vertices = self.vertices.iter().map(|v| Vec3::from_f64(v.to_f64())).collect();
        TriMesh::new(vertices, self.faces.clone())
    }
}

/// Reads an ASCII OBJ mesh: `v x y z` vertices and `f i j k` triangle faces
/// with 1-based indices. Other line types are ignored.
pub fn read_obj<S: Real, P: AsRef<Path>>(path: P) -> Result<TriMesh<S>> {
    let file = std::fs::File::open(path.as_ref())?;
    let reader = BufReader::new(file);
    let mut vertices: Vec<Point3<S>> = Vec::new();
    let mut faces: Vec<[u32; 3]> = Vec::new();
    for (ln, line) in reader.lines().enumerate() {
        let line = line?;
        let mut it = line.split_whitespace();
        match it.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    *c = it
                        .next()
                        .and_then(|t| t.parse().ok())
                        .ok_or_else(|| bad_obj(ln, "vertex needs three coordinates"))?;
                }
                vertices.push(Vec3::new(rl(coords[0]), rl(coords[1]), rl(coords[2])));
            }
            Some("f") => {
                let mut idx = [0u32; 3];
                for i in &mut idx {
                    // Accept `f i`, `f i/t`, `f i/t/n` forms; only the vertex
                    // index is used.
                    let tok = it.next().ok_or_else(|| bad_obj(ln, "face needs three indices"))?;
                    let first = tok.split('/').next().unwrap_or("");
                    let one_based: i64 = first
                        .parse()
                        .map_err(|_| bad_obj(ln, "face index is not an integer"))?;
                    if one_based < 1 {
                        return Err(bad_obj(ln, "face indices are 1-based and positive"));
                    }
                    *i = (one_based - 1) as u32;
                }
                if it.next().is_some() {
                    return Err(bad_obj(ln, "only triangle faces are supported"));
                }
                faces.push(idx);
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces)
}

fn bad_obj(line0: usize, msg: &str) -> Error {
    Error::IllFormedMesh(format!("OBJ line {}: {}", line0 + 1, msg))
}

/// Writes an ASCII OBJ mesh with full-precision coordinates.
pub fn write_obj<S: Real, P: AsRef<Path>>(mesh: &TriMesh<S>, path: P) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v.x, v.y, v.z)?;
    }
    for f in &mesh.faces {
        writeln!(w, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a binary little-endian PLY with float32 positions and
/// uchar-counted int32 face indices.
pub fn write_ply<S: Real, P: AsRef<Path>>(mesh: &TriMesh<S>, path: P) -> Result<()> {
    let file = std::fs::File::create(path.as_ref())?;
    let mut w = BufWriter::new(file);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\n\
         property float x\nproperty float y\nproperty float z\n\
         element face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len()
    )?;
    for v in &mesh.vertices {
        for c in [v.x, v.y, v.z] {
            w.write_all(&(c.to_f64() as f32).to_le_bytes())?;
        }
    }
    for f in &mesh.faces {
        w.write_all(&[3u8])?;
        for &i in f {
            w.write_all(&(i as i32).to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a binary little-endian PLY containing float or double vertex
/// positions and a uchar/int-style face index list.
pub fn read_ply<S: Real, P: AsRef<Path>>(path: P) -> Result<TriMesh<S>> {
    let mut file = BufReader::new(std::fs::File::open(path.as_ref())?);

    // The header is ASCII lines terminated by "end_header".
    let mut header = String::new();
    let mut byte = [0u8; 1];
    while !header.ends_with("end_header\n") {
        file.read_exact(&mut byte)
            .map_err(|_| Error::IllFormedMesh("PLY header truncated".into()))?;
        header.push(byte[0] as char);
        if header.len() > 65536 {
            return Err(Error::IllFormedMesh("PLY header too large".into()));
        }
    }
    if !header.starts_with("ply") {
        return Err(Error::IllFormedMesh("missing PLY magic".into()));
    }
    if !header.contains("format binary_little_endian 1.0") {
        return Err(Error::IllFormedMesh(
            "only binary little-endian PLY is supported".into(),
        ));
    }

    let mut n_vertex = 0usize;
    let mut n_face = 0usize;
    let mut vertex_is_double = false;
    let mut current = "";
    for line in header.lines() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["element", "vertex", n] => {
                current = "vertex";
                n_vertex = n
                    .parse()
                    .map_err(|_| Error::IllFormedMesh("bad vertex count".into()))?;
            }
            ["element", "face", n] => {
                current = "face";
                n_face = n
                    .parse()
                    .map_err(|_| Error::IllFormedMesh("bad face count".into()))?;
            }
            ["element", ..] => current = "other",
            ["property", ty, name] if current == "vertex" => {
                if matches!(*name, "x" | "y" | "z") {
                    match *ty {
                        "float" | "float32" => vertex_is_double = false,
                        "double" | "float64" => vertex_is_double = true,
                        _ => {
                            return Err(Error::IllFormedMesh(format!(
                                "unsupported vertex coordinate type {ty}"
                            )))
                        }
                    }
                } else {
                    return Err(Error::IllFormedMesh(format!(
                        "unsupported vertex property {name}"
                    )));
                }
            }
            _ => {}
        }
    }
    if n_vertex == 0 || n_face == 0 {
        return Err(Error::IllFormedMesh("PLY has no vertices or faces".into()));
    }

    let mut vertices = Vec::with_capacity(n_vertex);
    for _ in 0..n_vertex {
        let mut coords = [0.0f64; 3];
        for c in &mut coords {
            *c = if vertex_is_double {
                let mut b = [0u8; 8];
                file.read_exact(&mut b)?;
                f64::from_le_bytes(b)
            } else {
                let mut b = [0u8; 4];
                file.read_exact(&mut b)?;
                f32::from_le_bytes(b) as f64
            };
        }
        vertices.push(Vec3::new(rl(coords[0]), rl(coords[1]), rl(coords[2])));
    }
    let mut faces = Vec::with_capacity(n_face);
    for _ in 0..n_face {
        let mut count = [0u8; 1];
        file.read_exact(&mut count)?;
        if count[0] != 3 {
            return Err(Error::IllFormedMesh(
                "only triangle faces are supported".into(),
            ));
        }
        let mut f = [0u32; 3];
        for i in &mut f {
            let mut b = [0u8; 4];
            file.read_exact(&mut b)?;
            let v = i32::from_le_bytes(b);
            if v < 0 {
                return Err(Error::IllFormedMesh("negative face index".into()));
            }
            *i = v as u32;
        }
        faces.push(f);
    }
    TriMesh::new(vertices, faces)
}

/// Icosphere of the given radius centred at the origin: an icosahedron
/// subdivided `subdivisions` times with vertices projected to the sphere.
/// Watertight with outward winding.
pub fn icosphere<S: Real>(radius: S, subdivisions: u32) -> TriMesh<S> {
    let t = rl::<S>((1.0 + 5.0f64.sqrt()) / 2.0);
    let o = S::one();
    let z = S::zero();
    let mut vertices: Vec<Vec3<S>> = vec![
        Vec3::new(-o, t, z),
        Vec3::new(o, t, z),
        Vec3::new(-o, -t, z),
        Vec3::new(o, -t, z),
        Vec3::new(z, -o, t),
        Vec3::new(z, o, t),
        Vec3::new(z, -o, -t),
        Vec3::new(z, o, -t),
        Vec3::new(t, z, -o),
        Vec3::new(t, z, o),
        Vec3::new(-t, z, -o),
        Vec3::new(-t, z, o),
    ];
    let mut faces: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];
    for v in &mut vertices {
        *v = v.normalized_or_zero(rl(1e-30)) * radius;
    }
    for _ in 0..subdivisions {
        let mut midpoint: HashMap<(u32, u32), u32> = HashMap::new();
        let mut next_faces = Vec::with_capacity(faces.len() * 4);
        for f in &faces {
            let mut mids = [0u32; 3];
            for k in 0..3 {
                let key = edge_key(f[k], f[(k + 1) % 3]);
                mids[k] = *midpoint.entry(key).or_insert_with(|| {
                    let m = (vertices[key.0 as usize] + vertices[key.1 as usize]) * rl(0.5);
                    vertices.push(m.normalized_or_zero(rl(1e-30)) * radius);
                    (vertices.len() - 1) as u32
                });
            }
            next_faces.push([f[0], mids[0], mids[2]]);
            next_faces.push([f[1], mids[1], mids[0]]);
            next_faces.push([f[2], mids[2], mids[1]]);
            next_faces.push([mids[0], mids[1], mids[2]]);
        }
        faces = next_faces;
    }
    TriMesh::new(vertices, faces).expect("icosphere construction is always valid")
}

/// A unit-ish test shape: a tetrahedron with outward winding.
#[cfg(test)]
pub(crate) fn tetrahedron() -> TriMesh<f64> {
    let v = vec![
        Vec3::new(0.0, 0.0, 0.0),
        Vec3::new(100.0, 0.0, 0.0),
        Vec3::new(0.0, 100.0, 0.0),
        Vec3::new(0.0, 0.0, 100.0),
    ];
    let f = vec![[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]];
    TriMesh::new(v, f).unwrap()
}
