//! Minimal ray-cast renderer: Lambertian flat shading with a depth test
//! against an optional sphere occluder, plus binary PPM/PBM image I/O.
//!
//! Rays go through pixel centers (i + 0.5, j + 0.5). The mask records the
//! hand silhouette: every pixel whose ray hits the hand mesh, whether or not
//! the occluder is in front, so the mask stays a pure function of the hand.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bvh::TriBvh;
use crate::camera::CameraIntrinsics;
use crate::error::{Error, Result};
use crate::math::{Point3, Vec3};
use crate::mesh::TriMesh;
use crate::scalar::{rl, Real};

/// 8-bit RGB image, row-major, top-left origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedImage {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
}

impl RenderedImage {
    pub fn pixel(&self, u: u32, v: u32) -> [u8; 3] {
        let i = 3 * (v as usize * self.width as usize + u as usize);
        [self.rgb[i], self.rgb[i + 1], self.rgb[i + 2]]
    }
}

/// Binary foreground mask, row-major, top-left origin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub width: u32,
    pub height: u32,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn get(&self, u: u32, v: u32) -> bool {
        self.bits[v as usize * self.width as usize + u as usize]
    }

    pub fn foreground_count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }
}

/// A sphere standing in for a foreground object.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Occluder<S> {
    pub center: Point3<S>,
    pub radius: S,
}

impl<S: Real> Occluder<S> {
    /// Smallest positive ray parameter hitting the sphere, if any.
    fn ray_hit(&self, origin: Point3<S>, dir: Vec3<S>) -> Option<S> {
        let oc = origin - self.center;
        let b = oc.dot(dir);
        let c = oc.norm_sq() - self.radius * self.radius;
        let disc = b * b - c;
        if disc < S::zero() {
            return None;
        }
        let sq = disc.sqrt();
        for t in [-b - sq, -b + sq] {
            if t > rl(1e-9) {
                return Some(t);
            }
        }
        None
    }
}

const HAND_ALBEDO: [f64; 3] = [0.92, 0.76, 0.64];
const OCCLUDER_ALBEDO: [f64; 3] = [0.35, 0.42, 0.55];
const AMBIENT: f64 = 0.25;
/// Unit direction toward the light, camera frame.
const LIGHT: [f64; 3] = [-0.37139068, 0.32496684, -0.86964464];

fn shade(albedo: [f64; 3], normal: Vec3<f64>) -> [u8; 3] {
    let l = Vec3::new(LIGHT[0], LIGHT[1], LIGHT[2]);
    let lambert = normal.dot(l).max(0.0);
    albedo.map(|a| {
        let v = a * (AMBIENT + (1.0 - AMBIENT) * lambert);
        (v.clamp(0.0, 1.0) * 255.0).round() as u8
    })
}

/// Renders the hand mesh (and optional occluder) from the origin camera.
/// Returns the shaded image and the hand silhouette mask.
pub fn render_scene<S: Real>(
    mesh: &TriMesh<S>,
    bvh: &TriBvh<S>,
    cam: &CameraIntrinsics<S>,
    occluder: Option<&Occluder<S>>,
) -> (RenderedImage, Mask) {
    let (w, h) = (cam.width as usize, cam.height as usize);
    let rows: Vec<(Vec<u8>, Vec<bool>)> = (0..h)
        .into_par_iter()
        .map(|v| {
            let mut rgb = vec![0u8; 3 * w];
            let mut bits = vec![false; w];
            for u in 0..w {
                let px = rl::<S>(u as f64 + 0.5);
                let py = rl::<S>(v as f64 + 0.5);
                let dir = Vec3::new(
                    (px - cam.cx) / cam.fx,
                    (py - cam.cy) / cam.fy,
                    S::one(),
                )
                .normalized_or_zero(rl(1e-12));
                let origin = Vec3::zero();

                let hand = bvh.first_hit(origin, dir, rl(1e-6));
                if hand.is_some() {
                    bits[u] = true;
                }
                let occ = occluder.and_then(|o| o.ray_hit(origin, dir).map(|t| (o, t)));

                let color = match (hand, occ) {
                    (Some(hit), Some((o, t_occ))) if t_occ < hit.t => {
                        let p = (origin + dir * t_occ).to_f64();
                        shade(OCCLUDER_ALBEDO, (p - o.center.to_f64()).normalized_or_zero(1e-12))
                    }
                    (Some(hit), _) => {
                        let n = mesh.face_normals[hit.face as usize].to_f64();
                        shade(HAND_ALBEDO, n)
                    }
                    (None, Some((o, t_occ))) => {
                        let p = (origin + dir * t_occ).to_f64();
                        shade(OCCLUDER_ALBEDO, (p - o.center.to_f64()).normalized_or_zero(1e-12))
                    }
                    (None, None) => [0, 0, 0],
                };
                rgb[3 * u..3 * u + 3].copy_from_slice(&color);
            }
            (rgb, bits)
        })
        .collect();

    let mut rgb = Vec::with_capacity(3 * w * h);
    let mut bits = Vec::with_capacity(w * h);
    for (r, b) in rows {
        rgb.extend_from_slice(&r);
        bits.extend_from_slice(&b);
    }
    (
        RenderedImage {
            width: cam.width,
            height: cam.height,
            rgb,
        },
        Mask {
            width: cam.width,
            height: cam.height,
            bits,
        },
    )
}

/// Writes a binary PPM (P6, maxval 255).
pub fn write_ppm<P: AsRef<Path>>(image: &RenderedImage, path: P) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P6\n{} {}\n255\n", image.width, image.height)?;
    f.write_all(&image.rgb)?;
    Ok(())
}

/// Writes a binary PBM (P4); set bits mark foreground.
pub fn write_pbm<P: AsRef<Path>>(mask: &Mask, path: P) -> Result<()> {
    let mut f = BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P4\n{} {}\n", mask.width, mask.height)?;
    let row_bytes = (mask.width as usize + 7) / 8;
    let mut buf = vec![0u8; row_bytes * mask.height as usize];
    for v in 0..mask.height as usize {
        for u in 0..mask.width as usize {
            if mask.bits[v * mask.width as usize + u] {
                buf[v * row_bytes + u / 8] |= 0x80 >> (u % 8);
            }
        }
    }
    f.write_all(&buf)?;
    Ok(())
}

fn read_netpbm_header(data: &[u8], magic: &str, fields: usize) -> Result<(Vec<usize>, usize)> {
    // Header tokens separated by whitespace; '#' starts a comment to EOL.
    let mut values = Vec::new();
    let mut pos = 0;
    let mut token = String::new();
    let mut in_comment = false;
    let mut seen_magic = false;
    while pos < data.len() && values.len() < fields {
        let c = data[pos] as char;
        pos += 1;
        if in_comment {
            if c == '\n' {
                in_comment = false;
            }
            continue;
        }
        if c == '#' {
            in_comment = true;
            continue;
        }
        if c.is_whitespace() {
            if !token.is_empty() {
                if !seen_magic {
                    if token != magic {
                        return Err(Error::Dataset(format!(
                            "expected {magic} header, found {token}"
                        )));
                    }
                    seen_magic = true;
                } else {
                    values.push(token.parse::<usize>().map_err(|_| {
                        Error::Dataset(format!("bad {magic} header field '{token}'"))
                    })?);
                }
                token.clear();
            }
            continue;
        }
        token.push(c);
    }
    if values.len() < fields {
        return Err(Error::Dataset(format!("truncated {magic} header")));
    }
    Ok((values, pos))
}

pub fn read_ppm<P: AsRef<Path>>(path: P) -> Result<RenderedImage> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let (fields, body) = read_netpbm_header(&data, "P6", 3)?;
    let (w, h, maxval) = (fields[0], fields[1], fields[2]);
    if maxval != 255 {
        return Err(Error::Dataset(format!("unsupported PPM maxval {maxval}")));
    }
    let need = 3 * w * h;
    if data.len() < body + need {
        return Err(Error::Dataset("truncated PPM payload".into()));
    }
    Ok(RenderedImage {
        width: w as u32,
        height: h as u32,
        rgb: data[body..body + need].to_vec(),
    })
}

pub fn read_pbm<P: AsRef<Path>>(path: P) -> Result<Mask> {
    let mut data = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut data)?;
    let (fields, body) = read_netpbm_header(&data, "P4", 2)?;
    let (w, h) = (fields[0], fields[1]);
    let row_bytes = (w + 7) / 8;
    if data.len() < body + row_bytes * h {
        return Err(Error::Dataset("truncated PBM payload".into()));
    }
    let mut bits = vec![false; w * h];
    for v in 0..h {
        for u in 0..w {
            let byte = data[body + v * row_bytes + u / 8];
            bits[v * w + u] = byte & (0x80 >> (u % 8)) != 0;
        }
    }
    Ok(Mask {
        width: w as u32,
        height: h as u32,
        bits,
    })
}
