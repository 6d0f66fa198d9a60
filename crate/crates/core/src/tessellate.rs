//! Icosphere construction and deformation onto superquadric surfaces.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::Write;

use crate::{Error, Result, Vec3};

/// Deepest subdivision level accepted by [`icosphere`].
pub const MAX_LEVEL: u32 = 4;
/// Faces with a smaller deformed area are flagged degenerate.
pub const DEGENERATE_AREA: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct IcosphereMesh {
    pub vertices: Vec<Vec3>,
    pub faces: Vec<[usize; 3]>,
    pub level: u32,
}

impl IcosphereMesh {
    pub fn face_count(level: u32) -> usize {
        20 * 4usize.pow(level)
    }

    pub fn vertex_count(level: u32) -> usize {
        10 * 4usize.pow(level) + 2
    }
}

/// Regular icosahedron subdivided `level` times, every vertex on the unit sphere.
/// Faces are wound counter-clockwise seen from outside.
pub fn icosphere(level: u32) -> Result<IcosphereMesh> {
    if level > MAX_LEVEL {
        return Err(Error::InvalidConfig(format!("icosphere level {level} exceeds maximum {MAX_LEVEL}")));
    }
    let phi = (1.0 + 5.0f64.sqrt()) / 2.0;
    let mut vertices: Vec<Vec3> = [
        [-1.0, phi, 0.0],
        [1.0, phi, 0.0],
        [-1.0, -phi, 0.0],
        [1.0, -phi, 0.0],
        [0.0, -1.0, phi],
        [0.0, 1.0, phi],
        [0.0, -1.0, -phi],
        [0.0, 1.0, -phi],
        [phi, 0.0, -1.0],
        [phi, 0.0, 1.0],
        [-phi, 0.0, -1.0],
        [-phi, 0.0, 1.0],
    ]
    .iter()
    .map(|v| Vec3::from(*v).normalize())
    .collect();
    let mut faces: Vec<[usize; 3]> = vec![
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

    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();
        let mut next = Vec::with_capacity(faces.len() * 4);
        let mut midpoint = |a: usize, b: usize, verts: &mut Vec<Vec3>| -> usize {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                verts.push(((verts[a] + verts[b]) * 0.5).normalize());
                verts.len() - 1
            })
        };
        for &[a, b, c] in &faces {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            next.extend_from_slice(&[[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]);
        }
        faces = next;
    }

    Ok(IcosphereMesh { vertices, faces, level })
}

/// `(eta, omega)` of a unit direction: latitude `asin(z)` and longitude
/// `atan2(y, x)` in `(-pi, pi]`. Poles get `omega = 0`.
pub fn spherical_coords(v: &Vec3) -> (f64, f64) {
    let eta = v.z.clamp(-1.0, 1.0).asin();
    let omega = if v.x.hypot(v.y) < 1e-12 {
        0.0
    } else {
        let w = v.y.atan2(v.x);
        if w <= -PI {
            PI
        } else {
            w
        }
    };
    (eta, omega)
}

/// `sign(a) * |a|^e`.
#[inline]
pub fn sgnpow(a: f64, e: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a.signum() * a.abs().powf(e)
    }
}

/// Parametric superquadric surface point for angles `(eta, omega)`.
pub fn map_to_surface(eta: f64, omega: f64, scale: &Vec3, eps1: f64, eps2: f64) -> Vec3 {
    let ce = sgnpow(eta.cos(), eps1);
    Vec3::new(
        scale.x * ce * sgnpow(omega.cos(), eps2),
        scale.y * ce * sgnpow(omega.sin(), eps2),
        scale.z * sgnpow(eta.sin(), eps1),
    )
}

/// Placement frame of one deformed face, in the superquadric's local frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceFrame {
    pub centroid: Vec3,
    pub normal: Vec3,
    pub tangent_u: Vec3,
    pub tangent_v: Vec3,
    pub area: f64,
    pub eta: f64,
    pub omega: f64,
    pub degenerate: bool,
}

/// Mesh vertices mapped onto the surface `S(scale, eps1, eps2)`.
pub fn deform_vertices(mesh: &IcosphereMesh, scale: &Vec3, eps1: f64, eps2: f64) -> Vec<Vec3> {
    mesh.vertices
        .iter()
        .map(|v| {
            let (eta, omega) = spherical_coords(v);
            map_to_surface(eta, omega, scale, eps1, eps2)
        })
        .collect()
}

/// Deforms the mesh onto the superquadric surface and returns one frame per
/// face, in face order.
pub fn deform_mesh(mesh: &IcosphereMesh, scale: &Vec3, eps1: f64, eps2: f64) -> Vec<SurfaceFrame> {
    let deformed = deform_vertices(mesh, scale, eps1, eps2);
    mesh.faces
        .iter()
        .map(|&[a, b, c]| {
            let (p0, p1, p2) = (deformed[a], deformed[b], deformed[c]);
            let sphere_dir = (mesh.vertices[a] + mesh.vertices[b] + mesh.vertices[c]).normalize();
            let (eta, omega) = spherical_coords(&sphere_dir);
            let centroid = (p0 + p1 + p2) / 3.0;
            let edge = p1 - p0;
            let cross = edge.cross(&(p2 - p0));
            let area = 0.5 * cross.norm();
            let degenerate = area < DEGENERATE_AREA;
            let normal = if degenerate { sphere_dir } else { cross.normalize() };
            let tangent_u = orthogonal_unit(&edge, &normal);
            let tangent_v = normal.cross(&tangent_u);
            SurfaceFrame { centroid, normal, tangent_u, tangent_v, area, eta, omega, degenerate }
        })
        .collect()
}

/// `v` with its component along `n` removed, normalized. Falls back to an
/// arbitrary perpendicular when `v` is (nearly) parallel to `n`.
fn orthogonal_unit(v: &Vec3, n: &Vec3) -> Vec3 {
    let t = v - n * v.dot(n);
    if t.norm() > 1e-15 {
        return t.normalize();
    }
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    (helper - n * helper.dot(n)).normalize()
}

/// ASCII OFF dump of a vertex/face list.
pub fn write_off<W: Write>(mut out: W, vertices: &[Vec3], faces: &[[usize; 3]]) -> std::io::Result<()> {
    writeln!(out, "OFF")?;
    writeln!(out, "{} {} 0", vertices.len(), faces.len())?;
    for v in vertices {
        writeln!(out, "{} {} {}", v.x, v.y, v.z)?;
    }
    for f in faces {
        writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    Ok(())
}
