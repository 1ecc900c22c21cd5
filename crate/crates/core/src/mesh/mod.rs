//! Triangle meshes from voxel grids, and Wavefront OBJ files.

mod tables;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::datagen::cell_center;
use crate::error::{Error, Result};
use crate::voxel::VoxelGrid;
use tables::{CORNERS, EDGES, TRIANGLES};

/// Indexed triangle mesh with counter-clockwise outward faces.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TriMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[usize; 3]>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm(a: [f64; 3]) -> f64 {
    (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt()
}

impl TriMesh {
    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    fn corners(&self, t: &[usize; 3]) -> [[f64; 3]; 3] {
        t.map(|i| self.vertices[i])
    }

    pub fn area(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.corners(t);
                0.5 * norm(cross(sub(b, a), sub(c, a)))
            })
            .sum()
    }

    /// Enclosed volume by the divergence theorem; positive for outward faces.
    pub fn signed_volume(&self) -> f64 {
        self.triangles
            .iter()
            .map(|t| {
                let [a, b, c] = self.corners(t);
                let n = cross(b, c);
                (a[0] * n[0] + a[1] * n[1] + a[2] * n[2]) / 6.0
            })
            .sum()
    }

    /// Undirected edges with the number of triangles using each.
    pub fn edge_counts(&self) -> HashMap<(usize, usize), usize> {
        let mut m = HashMap::new();
        for t in &self.triangles {
            for k in 0..3 {
                let (a, b) = (t[k], t[(k + 1) % 3]);
                *m.entry((a.min(b), a.max(b))).or_insert(0) += 1;
            }
        }
        m
    }

    /// Every edge is shared by exactly two triangles.
    pub fn is_watertight(&self) -> bool {
        !self.is_empty() && self.edge_counts().values().all(|&c| c == 2)
    }

    /// `V - E + F` over the vertices referenced by triangles.
    pub fn euler_characteristic(&self) -> i64 {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i] = true;
            }
        }
        let v = used.iter().filter(|&&u| u).count() as i64;
        v - self.edge_counts().len() as i64 + self.triangles.len() as i64
    }

    /// Umbrella-operator Laplacian smoothing: each pass moves every vertex
    /// `lambda` of the way towards the mean of its neighbours.
    pub fn smooth(&mut self, iterations: usize, lambda: f64) {
        let mut nbrs: Vec<Vec<usize>> = vec![Vec::new(); self.vertices.len()];
        for &(a, b) in self.edge_counts().keys() {
            nbrs[a].push(b);
            nbrs[b].push(a);
        }
        for n in &mut nbrs {
            n.sort_unstable();
        }
        for _ in 0..iterations {
            let prev = self.vertices.clone();
            for (i, v) in self.vertices.iter_mut().enumerate() {
                if nbrs[i].is_empty() {
                    continue;
                }
                let k = nbrs[i].len() as f64;
                for d in 0..3 {
                    let mean = nbrs[i].iter().map(|&j| prev[j][d]).sum::<f64>() / k;
                    v[d] += lambda * (mean - v[d]);
                }
            }
        }
    }

    /// Maps grid-index coordinates to the generator's world frame, where
    /// cell centres span `[-1, 1]` and `y` points up.
    pub fn to_world(&self, dims: [usize; 3]) -> TriMesh {
        let [d, h, w] = dims;
        let map = |c: f64, res: usize| (2.0 * c + 1.0 - res as f64) / res as f64;
        debug_assert_eq!(map(0.0, w), cell_center(0, w) as f64);
        TriMesh {
            vertices: self
                .vertices
                .iter()
                .map(|v| [map(v[0], w), -map(v[1], h), map(v[2], d)])
                .collect(),
            // flipping y mirrors the mesh, so reverse the winding
            triangles: self.triangles.iter().map(|t| [t[0], t[2], t[1]]).collect(),
        }
    }

    pub fn to_obj(&self) -> String {
        let mut s = String::from("# voxelrec mesh\n");
        for v in &self.vertices {
            writeln!(s, "v {:.6} {:.6} {:.6}", v[0], v[1], v[2]).expect("string write");
        }
        for t in &self.triangles {
            writeln!(s, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).expect("string write");
        }
        s
    }

    pub fn write_obj(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_obj())?;
        Ok(())
    }

    /// Reads the `v` and triangular `f` lines of an OBJ file; comments and
    /// blank lines are skipped, anything else is an error.
    pub fn parse_obj(text: &str) -> Result<TriMesh> {
        let mut m = TriMesh::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = || Error::Format(format!("obj line {}: {line:?}", n + 1));
            let mut parts = line.split_whitespace();
            let tag = parts.next().ok_or_else(bad)?;
            let rest: Vec<&str> = parts.collect();
            if rest.len() != 3 {
                return Err(bad());
            }
            match tag {
                "v" => {
                    let mut v = [0.0; 3];
                    for (d, p) in rest.iter().enumerate() {
                        v[d] = p.parse().map_err(|_| bad())?;
                    }
                    m.vertices.push(v);
                }
                "f" => {
                    let mut t = [0; 3];
                    for (d, p) in rest.iter().enumerate() {
                        // accept `i/vt/vn` and keep the vertex index
                        let i: usize = p.split('/').next().unwrap_or("").parse().map_err(|_| bad())?;
                        if i == 0 {
                            return Err(bad());
                        }
                        t[d] = i - 1;
                    }
                    m.triangles.push(t);
                }
                _ => return Err(bad()),
            }
        }
        if m.triangles.iter().flatten().any(|&i| i >= m.vertices.len()) {
            return Err(Error::Format("obj face refers to a missing vertex".into()));
        }
        Ok(m)
    }

    pub fn read_obj(path: impl AsRef<Path>) -> Result<TriMesh> {
        Self::parse_obj(&fs::read_to_string(path)?)
    }
}

/// Extracts the `iso` level set of `v`, treating values `>= iso` as inside.
///
/// Vertices are in grid-index coordinates `(x, y, z)` and are shared between
/// neighbouring cubes, so closed solids give closed meshes. Solids touching
/// the grid border are left open there.
pub fn marching_cubes(v: &VoxelGrid, iso: f32) -> TriMesh {
    let [d, h, w] = v.dims();
    let mut mesh = TriMesh::default();
    if d < 2 || h < 2 || w < 2 {
        return mesh;
    }
    let at = |x: usize, y: usize, z: usize| v.get(z, y, x);
    // vertex index per (grid point, axis) edge
    let mut edge_vertex: HashMap<(usize, usize, usize, usize), usize> = HashMap::new();
    for z in 0..d - 1 {
        for y in 0..h - 1 {
            for x in 0..w - 1 {
                let vals: [f32; 8] = CORNERS.map(|c| at(x + c[0], y + c[1], z + c[2]));
                let mut case = 0usize;
                for (k, &val) in vals.iter().enumerate() {
                    if val < iso {
                        case |= 1 << k;
                    }
                }
                let row = &TRIANGLES[case];
                let mut i = 0;
                while i < 16 && row[i] >= 0 {
                    let mut tri = [0usize; 3];
                    for (slot, &e) in tri.iter_mut().zip(&row[i..i + 3]) {
                        let [c0, c1] = EDGES[e as usize];
                        let (p0, p1) = (CORNERS[c0], CORNERS[c1]);
                        let lo = if p0 <= p1 { p0 } else { p1 };
                        let axis = (0..3).find(|&a| p0[a] != p1[a]).expect("edge spans one axis");
                        let key = (x + lo[0], y + lo[1], z + lo[2], axis);
                        *slot = *edge_vertex.entry(key).or_insert_with(|| {
                            let (a, b) = (vals[c0], vals[c1]);
                            let t = if a == b { 0.5 } else { ((iso - a) / (b - a)).clamp(0.0, 1.0) } as f64;
                            let base = [x, y, z];
                            mesh.vertices.push([0, 1, 2].map(|k| (base[k] + p0[k]) as f64 + t * (p1[k] as f64 - p0[k] as f64)));
                            mesh.vertices.len() - 1
                        });
                    }
                    let [a, b, c] = mesh.corners(&tri);
                    if norm(cross(sub(b, a), sub(c, a))) > 1e-12 {
                        mesh.triangles.push(tri);
                    }
                    i += 3;
                }
            }
        }
    }
    mesh
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_grid_gives_empty_mesh() {
        assert!(marching_cubes(&VoxelGrid::zeros([4, 4, 4]), 0.5).is_empty());
        assert!(marching_cubes(&VoxelGrid::zeros([1, 4, 4]), 0.5).is_empty());
        assert_eq!(TriMesh::default().to_obj(), "# voxelrec mesh\n");
    }

    #[test]
    fn single_voxel_is_closed_octahedron() {
        let mut g = VoxelGrid::zeros([3, 3, 3]);
        g.set(1, 1, 1, 1.0);
        let m = marching_cubes(&g, 0.5);
        assert_eq!(m.triangles.len(), 8);
        assert!(m.is_watertight());
        assert_eq!(m.euler_characteristic(), 2);
        // octahedron with half-diagonal 0.5
        assert!((m.signed_volume() - 4.0 / 3.0 * 0.125).abs() < 1e-12);
    }

    #[test]
    fn obj_round_trip_is_canonical() {
        let m = TriMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, -0.25]],
            triangles: vec![[0, 1, 2]],
        };
        let s = m.to_obj();
        assert_eq!(s.lines().filter(|l| l.starts_with("v ")).count(), 3);
        assert_eq!(s.lines().filter(|l| l.starts_with("f ")).count(), 1);
        assert_eq!(TriMesh::parse_obj(&s).unwrap().to_obj(), s);
        assert!(TriMesh::parse_obj("f 1 2 3\n").is_err());
        assert!(TriMesh::parse_obj("v 1 2\n").is_err());
    }

    #[test]
    fn world_frame_keeps_outward_orientation() {
        let mut g = VoxelGrid::zeros([4, 4, 4]);
        g.set(1, 1, 1, 1.0);
        g.set(1, 2, 1, 1.0);
        let m = marching_cubes(&g, 0.5);
        assert!(m.signed_volume() > 0.0);
        assert!(m.to_world(g.dims()).signed_volume() > 0.0);
    }

    #[test]
    fn smoothing_shrinks_towards_centroid() {
        let mut g = VoxelGrid::zeros([5, 5, 5]);
        for z in 1..4 {
            for y in 1..4 {
                for x in 1..4 {
                    g.set(z, y, x, 1.0);
                }
            }
        }
        let mut m = marching_cubes(&g, 0.5);
        let before = m.signed_volume();
        m.smooth(2, 0.5);
        assert!(m.signed_volume() < before);
        assert!(m.is_watertight());
    }

    #[test]
    fn random_blobs_are_closed() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let mut g = VoxelGrid::zeros([8, 8, 8]);
            for z in 1..7 {
                for y in 1..7 {
                    for x in 1..7 {
                        g.set(z, y, x, if rng.gen_bool(0.5) { 1.0 } else { 0.0 });
                    }
                }
            }
            let m = marching_cubes(&g, 0.5);
            assert!(m.edge_counts().values().all(|&c| c % 2 == 0));
            assert!(m.signed_volume() > 0.0);
        }
    }

    #[test]
    fn sphere_area_and_topology() {
        let n = 32;
        let r = 10.0;
        let c = (n as f64 - 1.0) / 2.0;
        let mut g = VoxelGrid::zeros([n, n, n]);
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2)).sqrt();
                    g.set(z, y, x, (r - d) as f32);
                }
            }
        }
        let m = marching_cubes(&g, 0.0);
        assert!(m.is_watertight());
        assert_eq!(m.euler_characteristic(), 2);
        let exact = 4.0 * std::f64::consts::PI * r * r;
        assert!((m.area() - exact).abs() / exact < 0.02, "{}", m.area());
    }
}
