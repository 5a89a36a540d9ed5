//! Triangulated closed surfaces and the affine charts that pull each panel
//! back to the reference triangle `{(s, t) : 0 <= t <= s <= 1}`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::vec3::{self, Point3};

/// Largest refinement level accepted by [`build_sphere_mesh`].
pub const MAX_SPHERE_LEVEL: usize = 12;

/// Reference-triangle vertices in chart order.
pub const REFERENCE_VERTICES: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]];

pub const IDENTITY_PERM: [usize; 3] = [0, 1, 2];

/// Indexed triangle mesh with per-panel normals and Gramians.
#[derive(Clone, Debug)]
pub struct SurfaceMesh<T> {
    vertices: Vec<Point3<T>>,
    triangles: Vec<[usize; 3]>,
    normals: Vec<Point3<T>>,
    gramians: Vec<T>,
}

/// Affine map `Φ(s, t) = origin + s·edge1 + t·edge2` from the reference
/// triangle onto one panel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AffineChart<T> {
    pub origin: Point3<T>,
    pub edge1: Point3<T>,
    pub edge2: Point3<T>,
    pub gramian: T,
    /// Outward unit normal of the panel (independent of the permutation).
    pub normal: Point3<T>,
}

impl<T: Real> AffineChart<T> {
    #[inline]
    pub fn map(&self, s: T, t: T) -> Point3<T> {
        [
            self.origin[0] + s * self.edge1[0] + t * self.edge2[0],
            self.origin[1] + s * self.edge1[1] + t * self.edge2[1],
            self.origin[2] + s * self.edge1[2] + t * self.edge2[2],
        ]
    }
}

impl<T: Real> SurfaceMesh<T> {
    /// Builds a mesh, computing normals and Gramians. Orientation is taken
    /// from the index order of each triangle.
    pub fn new(vertices: Vec<Point3<T>>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if triangles.is_empty() {
            return Err(Error::MeshInvalid("mesh has no triangles".into()));
        }
        let nv = vertices.len();
        let mut normals = Vec::with_capacity(triangles.len());
        let mut gramians = Vec::with_capacity(triangles.len());
        for (k, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&i| i >= nv) {
                return Err(Error::MeshInvalid(format!(
                    "triangle {k} references a vertex outside 0..{nv}"
                )));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::MeshInvalid(format!(
                    "triangle {k} has repeated vertex indices"
                )));
            }
            let [a, b, c] = tri.map(|i| vertices[i]);
            let n = vec3::cross(vec3::sub(b, a), vec3::sub(c, a));
            let g = vec3::norm(n);
            if !(g > T::zero()) {
                return Err(Error::MeshInvalid(format!("triangle {k} is degenerate")));
            }
            normals.push(vec3::scale(n, T::one() / g));
            gramians.push(g);
        }
        Ok(Self {
            vertices,
            triangles,
            normals,
            gramians,
        })
    }

    pub fn vertices(&self) -> &[Point3<T>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn normals(&self) -> &[Point3<T>] {
        &self.normals
    }

    pub fn gramians(&self) -> &[T] {
        &self.gramians
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn triangle_vertices(&self, tri: usize) -> [Point3<T>; 3] {
        self.triangles[tri].map(|i| self.vertices[i])
    }

    pub fn area(&self, tri: usize) -> T {
        self.gramians[tri] / T::lit(2.0)
    }

    pub fn total_area(&self) -> T {
        self.gramians
            .iter()
            .fold(T::zero(), |acc, &g| acc + g / T::lit(2.0))
    }

    pub fn centroid(&self, tri: usize) -> Point3<T> {
        let [a, b, c] = self.triangle_vertices(tri);
        vec3::scale(vec3::add(vec3::add(a, b), c), T::one() / T::lit(3.0))
    }

    /// Chart whose reference vertex `k` maps onto vertex `perm[k]` of the
    /// triangle. The Gramian is the stored per-panel value and therefore
    /// exactly independent of `perm`.
    pub fn chart(&self, tri: usize, perm: [usize; 3]) -> Result<AffineChart<T>> {
        if tri >= self.triangles.len() {
            return Err(Error::InvalidArgument(format!(
                "triangle index {tri} out of range 0..{}",
                self.triangles.len()
            )));
        }
        let mut seen = [false; 3];
        for &p in &perm {
            if p > 2 || seen[p] {
                return Err(Error::InvalidArgument(format!(
                    "{perm:?} is not a permutation of 0..3"
                )));
            }
            seen[p] = true;
        }
        Ok(self.chart_unchecked(tri, perm))
    }

    #[inline]
    pub(crate) fn chart_unchecked(&self, tri: usize, perm: [usize; 3]) -> AffineChart<T> {
        let idx = self.triangles[tri];
        let p0 = self.vertices[idx[perm[0]]];
        let p1 = self.vertices[idx[perm[1]]];
        let p2 = self.vertices[idx[perm[2]]];
        AffineChart {
            origin: p0,
            edge1: vec3::sub(p1, p0),
            edge2: vec3::sub(p2, p1),
            gramian: self.gramians[tri],
            normal: self.normals[tri],
        }
    }

    /// Checks that every edge is shared by exactly two triangles with
    /// opposite orientation and that the enclosed signed volume is positive
    /// (outward normals).
    pub fn validate_closed(&self) -> Result<()> {
        let mut directed: HashMap<(usize, usize), usize> = HashMap::new();
        for (k, tri) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                let edge = (tri[e], tri[(e + 1) % 3]);
                if let Some(prev) = directed.insert(edge, k) {
                    return Err(Error::MeshInvalid(format!(
                        "directed edge {edge:?} used by triangles {prev} and {k} (inconsistent orientation)"
                    )));
                }
            }
        }
        for &(a, b) in directed.keys() {
            if !directed.contains_key(&(b, a)) {
                return Err(Error::MeshInvalid(format!("edge ({a}, {b}) is a boundary edge")));
            }
        }
        if !(self.signed_volume() > T::zero()) {
            return Err(Error::MeshInvalid("normals point inward".into()));
        }
        Ok(())
    }

    pub fn signed_volume(&self) -> T {
        self.triangles.iter().fold(T::zero(), |acc, tri| {
            let [a, b, c] = tri.map(|i| self.vertices[i]);
            acc + vec3::dot(a, vec3::cross(b, c)) / T::lit(6.0)
        })
    }

    /// Writes the ASCII interchange format: `nv nt`, then one `x y z` line
    /// per vertex and one 0-based `i j k` line per triangle.
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = String::new();
        writeln!(buf, "{} {}", self.vertices.len(), self.triangles.len()).unwrap();
        for v in &self.vertices {
            writeln!(buf, "{} {} {}", v[0], v[1], v[2]).unwrap();
        }
        for t in &self.triangles {
            writeln!(buf, "{} {} {}", t[0], t[1], t[2]).unwrap();
        }
        w.write_all(buf.as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in r.lines() {
            let line = line?;
            let line = line.split('#').next().unwrap_or("");
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        let mut it = tokens.into_iter();
        let mut next = |what: &str| {
            it.next()
                .ok_or_else(|| Error::Format(format!("unexpected end of mesh file reading {what}")))
        };
        let parse_usize = |s: String| {
            s.parse::<usize>()
                .map_err(|e| Error::Format(format!("bad integer `{s}`: {e}")))
        };
        let parse_real = |s: String| {
            s.parse::<f64>()
                .map(T::lit)
                .map_err(|e| Error::Format(format!("bad coordinate `{s}`: {e}")))
        };
        let nv = parse_usize(next("vertex count")?)?;
        let nt = parse_usize(next("triangle count")?)?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            vertices.push([
                parse_real(next("vertex")?)?,
                parse_real(next("vertex")?)?,
                parse_real(next("vertex")?)?,
            ]);
        }
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            triangles.push([
                parse_usize(next("triangle")?)?,
                parse_usize(next("triangle")?)?,
                parse_usize(next("triangle")?)?,
            ]);
        }
        if next("trailing data").is_ok() {
            return Err(Error::Format("trailing tokens after triangle list".into()));
        }
        Self::new(vertices, triangles)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }
}

/// Unit sphere from a refined octahedron: `8·4^level` triangles, outward
/// orientation, midpoints radially projected.
pub fn build_sphere_mesh<T: Real>(level: usize) -> Result<SurfaceMesh<T>> {
    if level > MAX_SPHERE_LEVEL {
        return Err(Error::Resource(format!(
            "sphere level {level} exceeds the maximum of {MAX_SPHERE_LEVEL}"
        )));
    }
    let (o, l) = (T::zero(), T::one());
    let mut vertices: Vec<Point3<T>> = vec![
        [l, o, o],
        [-l, o, o],
        [o, l, o],
        [o, -l, o],
        [o, o, l],
        [o, o, -l],
    ];
    let mut triangles = Vec::with_capacity(8 << (2 * level));
    for (x, y, z) in [
        (0, 2, 4),
        (2, 1, 4),
        (1, 3, 4),
        (3, 0, 4),
        (2, 0, 5),
        (1, 2, 5),
        (3, 1, 5),
        (0, 3, 5),
    ] {
        triangles.push([x, y, z]);
    }

    for _ in 0..level {
        let mut midpoints: HashMap<(usize, usize), usize> =
            HashMap::with_capacity(triangles.len() * 3 / 2);
        let mut refined = Vec::with_capacity(triangles.len() * 4);
        let mut midpoint = |a: usize, b: usize, vertices: &mut Vec<Point3<T>>| {
            let key = (a.min(b), a.max(b));
            *midpoints.entry(key).or_insert_with(|| {
                let m = vec3::normalize(vec3::add(vertices[a], vertices[b]));
                vertices.push(m);
                vertices.len() - 1
            })
        };
        for &[a, b, c] in &triangles {
            let ab = midpoint(a, b, &mut vertices);
            let bc = midpoint(b, c, &mut vertices);
            let ca = midpoint(c, a, &mut vertices);
            refined.push([a, ab, ca]);
            refined.push([ab, b, bc]);
            refined.push([ca, bc, c]);
            refined.push([ab, bc, ca]);
        }
        triangles = refined;
    }
    SurfaceMesh::new(vertices, triangles)
}
