//! Triangulated flat-faced surfaces: construction, newest-vertex-bisection
//! refinement, skeleton bookkeeping and per-element geometry.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix2, Vector3};

use crate::error::{DpgError, Result};

pub type Point = Vector3<f64>;

/// A triangle of the mesh.
///
/// Vertices are counterclockwise with respect to the face normal. The edge
/// `vertices[0] -> vertices[1]` is the refinement edge, i.e. the edge opposite
/// the newest vertex `vertices[2]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triangle {
    pub vertices: [usize; 3],
    /// Flat face of the surface containing the triangle.
    pub face: usize,
    /// Index of the ancestor triangle in the initial mesh.
    pub root: usize,
}

/// An edge of the skeleton, stored with its endpoints in increasing order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub vertices: [usize; 2],
    /// Incident `(triangle, local edge)` pairs; one entry on the boundary.
    pub incident: Vec<(usize, usize)>,
}

impl Edge {
    pub fn is_boundary(&self) -> bool {
        self.incident.len() == 1
    }
}

#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    vertices: Vec<Point>,
    triangles: Vec<Triangle>,
    edges: Vec<Edge>,
    /// Global edge index of local edge `i` (from vertex `i` to vertex `i+1`).
    tri_edges: Vec<[usize; 3]>,
    face_normals: Vec<Point>,
    is_closed: bool,
}

impl SurfaceMesh {
    /// Build an initial mesh from raw triangles `(vertex triple, face id)`.
    ///
    /// Triangles are reoriented counterclockwise with respect to their face
    /// normal and rotated so that the refinement edge is the longest edge,
    /// ties going to the lowest opposite-vertex index.
    pub fn from_triangles(
        vertices: Vec<Point>,
        raw: &[([usize; 3], usize)],
        face_normals: Vec<Point>,
    ) -> Result<Self> {
        let mut triangles = Vec::with_capacity(raw.len());
        for (root, &(tri, face)) in raw.iter().enumerate() {
            let normal = *face_normals
                .get(face)
                .ok_or_else(|| DpgError::InvalidMesh(format!("face {face} has no normal")))?;
            let [a, b, c] = tri;
            for &v in &tri {
                if v >= vertices.len() {
                    return Err(DpgError::InvalidMesh(format!("vertex index {v} out of range")));
                }
            }
            let cross = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
            let area = 0.5 * cross.norm();
            if area <= 0.0 {
                return Err(DpgError::DegenerateElement { tri: root, area });
            }
            let mut t = if cross.dot(&normal) > 0.0 { [a, b, c] } else { [a, c, b] };
            // choose the rotation whose edge 0 -> 1 is longest
            let mut best = 0;
            let mut best_key = (f64::NEG_INFINITY, usize::MAX);
            for r in 0..3 {
                let p = t[r];
                let q = t[(r + 1) % 3];
                let opp = t[(r + 2) % 3];
                let len = (vertices[q] - vertices[p]).norm();
                let better = len > best_key.0 * (1.0 + 1e-12)
                    || ((len - best_key.0).abs() <= 1e-12 * len && opp < best_key.1);
                if better {
                    best = r;
                    best_key = (len, opp);
                }
            }
            t.rotate_left(best);
            triangles.push(Triangle {
                vertices: t,
                face,
                root,
            });
        }
        let face_normals = face_normals.into_iter().map(|n| n.normalize()).collect();
        Self::assemble(vertices, triangles, face_normals)
    }

    fn assemble(vertices: Vec<Point>, triangles: Vec<Triangle>, face_normals: Vec<Point>) -> Result<Self> {
        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut tri_edges = Vec::with_capacity(triangles.len());
        for (t, tri) in triangles.iter().enumerate() {
            let mut local = [0; 3];
            for (i, slot) in local.iter_mut().enumerate() {
                let a = tri.vertices[i];
                let b = tri.vertices[(i + 1) % 3];
                let key = (a.min(b), a.max(b));
                let idx = *lookup.entry(key).or_insert_with(|| {
                    edges.push(Edge {
                        vertices: [key.0, key.1],
                        incident: Vec::with_capacity(2),
                    });
                    edges.len() - 1
                });
                edges[idx].incident.push((t, i));
                *slot = idx;
            }
            tri_edges.push(local);
        }
        let is_closed = edges.iter().all(|e| e.incident.len() == 2);
        let mesh = Self {
            vertices,
            triangles,
            edges,
            tri_edges,
            face_normals,
            is_closed,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    /// Check the structural and geometric invariants of the mesh.
    pub fn validate(&self) -> Result<()> {
        for (e, edge) in self.edges.iter().enumerate() {
            if edge.incident.is_empty() || edge.incident.len() > 2 {
                return Err(DpgError::InvalidMesh(format!(
                    "edge {e} has {} incident triangles",
                    edge.incident.len()
                )));
            }
            if let [(t0, i0), (t1, i1)] = edge.incident[..] {
                if self.edge_sign(t0, i0) + self.edge_sign(t1, i1) != 0 {
                    return Err(DpgError::InvalidMesh(format!(
                        "edge {e} is traversed in the same direction by both neighbours"
                    )));
                }
            }
        }
        let n_boundary = self.edges.iter().filter(|e| e.is_boundary()).count();
        if !self.is_closed && n_boundary < 3 {
            return Err(DpgError::InvalidMesh(format!("open mesh with {n_boundary} boundary edges")));
        }
        for (t, tri) in self.triangles.iter().enumerate() {
            let [a, b, c] = tri.vertices.map(|v| self.vertices[v]);
            let cross = (b - a).cross(&(c - a));
            let area = 0.5 * cross.norm();
            let scale = (b - a).norm_squared().max((c - a).norm_squared());
            if area <= 1e-14 * scale {
                return Err(DpgError::DegenerateElement { tri: t, area });
            }
            let n = self.face_normals[tri.face];
            if cross.normalize().dot(&n) < 1.0 - 1e-10 {
                return Err(DpgError::InvalidMesh(format!(
                    "triangle {t} is not counterclockwise in the plane of face {}",
                    tri.face
                )));
            }
        }
        if self.is_closed {
            let chi = self.vertices.len() as i64 - self.edges.len() as i64 + self.triangles.len() as i64;
            if chi != 2 {
                return Err(DpgError::InvalidMesh(format!("closed mesh with Euler characteristic {chi}")));
            }
        }
        Ok(())
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[Triangle] {
        &self.triangles
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn is_closed(&self) -> bool {
        self.is_closed
    }

    pub fn face_normal(&self, face: usize) -> Point {
        self.face_normals[face]
    }

    pub fn face_normals(&self) -> &[Point] {
        &self.face_normals
    }

    /// Global edge indices of the three local edges of `tri`.
    pub fn triangle_edges(&self, tri: usize) -> [usize; 3] {
        self.tri_edges[tri]
    }

    /// Orientation of local edge `local` of `tri` relative to the global edge
    /// orientation (low vertex index to high vertex index).
    pub fn edge_sign(&self, tri: usize, local: usize) -> i32 {
        let v = self.triangles[tri].vertices;
        if v[local] < v[(local + 1) % 3] {
            1
        } else {
            -1
        }
    }

    pub fn corners(&self, tri: usize) -> [Point; 3] {
        self.triangles[tri].vertices.map(|v| self.vertices[v])
    }

    pub fn total_area(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                0.5 * (b - a).cross(&(c - a)).norm()
            })
            .sum()
    }

    pub fn h_min(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                (0.5 * (b - a).cross(&(c - a)).norm()).sqrt()
            })
            .fold(f64::INFINITY, f64::min)
    }

    /// Shape-regularity parameter: max over triangles of diameter divided by
    /// the diameter of the inscribed circle.
    pub fn shape_regularity(&self) -> f64 {
        (0..self.triangles.len())
            .map(|t| {
                let [a, b, c] = self.corners(t);
                let lens = [(b - a).norm(), (c - b).norm(), (a - c).norm()];
                let area = 0.5 * (b - a).cross(&(c - a)).norm();
                let inradius = 2.0 * area / lens.iter().sum::<f64>();
                lens.iter().cloned().fold(0.0, f64::max) / (2.0 * inradius)
            })
            .fold(0.0, f64::max)
    }

    /// Write the mesh as Wavefront OBJ text.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        for p in &self.vertices {
            let _ = writeln!(s, "v {:.16e} {:.16e} {:.16e}", p.x, p.y, p.z);
        }
        for t in &self.triangles {
            let [a, b, c] = t.vertices;
            let _ = writeln!(s, "f {} {} {}", a + 1, b + 1, c + 1);
        }
        s
    }

    pub fn write_obj(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_obj())?;
        Ok(())
    }
}

/// Boundary of the cube `[-1, 1]^3`: 8 vertices, 12 triangles.
///
/// Vertex `i` has coordinates `(±1, ±1, ±1)` with the bits of `i` selecting the
/// signs of `x`, `y`, `z` (bit set means `+1`), so the lexicographically
/// smallest vertex of a face has the smallest index. Every face is split along
/// the diagonal through that vertex.
pub fn build_cube_surface() -> SurfaceMesh {
    let coord = |bit: usize| if bit == 1 { 1.0 } else { -1.0 };
    let vertices: Vec<Point> = (0..8)
        .map(|i| Point::new(coord((i >> 2) & 1), coord((i >> 1) & 1), coord(i & 1)))
        .collect();
    let mut raw = Vec::new();
    let mut normals = Vec::new();
    for axis in 0..3 {
        for side in 0..2 {
            let face = normals.len();
            let mut n = Point::zeros();
            n[axis] = if side == 1 { 1.0 } else { -1.0 };
            normals.push(n);
            let bit = 2 - axis;
            let mut verts: Vec<usize> = (0..8).filter(|i| (i >> bit) & 1 == side).collect();
            verts.sort_unstable();
            let v0 = verts[0];
            // the vertex diagonally opposite differs in both remaining bits
            let opposite = *verts.iter().find(|&&v| (v ^ v0).count_ones() == 2).unwrap();
            let others: Vec<usize> = verts.iter().copied().filter(|&v| v != v0 && v != opposite).collect();
            raw.push(([v0, others[0], opposite], face));
            raw.push(([v0, opposite, others[1]], face));
        }
    }
    SurfaceMesh::from_triangles(vertices, &raw, normals).expect("cube mesh is valid")
}

/// The square screen `(-1, 1)^2 x {0}` divided by its two diagonals.
///
/// Vertices 0..4 are the corners, vertex 4 is the centre.
pub fn build_square_screen() -> SurfaceMesh {
    let vertices = vec![
        Point::new(-1.0, -1.0, 0.0),
        Point::new(1.0, -1.0, 0.0),
        Point::new(1.0, 1.0, 0.0),
        Point::new(-1.0, 1.0, 0.0),
        Point::new(0.0, 0.0, 0.0),
    ];
    let raw = [([0, 1, 4], 0), ([1, 2, 4], 0), ([2, 3, 4], 0), ([3, 0, 4], 0)];
    SurfaceMesh::from_triangles(vertices, &raw, vec![Point::z()]).expect("screen mesh is valid")
}

/// Split every triangle into four children by two sweeps of newest vertex
/// bisection. All edges are halved, so the result is conforming.
pub fn refine_uniform(mesh: &SurfaceMesh) -> SurfaceMesh {
    let mut vertices = mesh.vertices.clone();
    let midpoints: Vec<usize> = mesh
        .edges
        .iter()
        .map(|e| {
            vertices.push((mesh.vertices[e.vertices[0]] + mesh.vertices[e.vertices[1]]) * 0.5);
            vertices.len() - 1
        })
        .collect();
    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let [p0, p1, p2] = tri.vertices;
        let [e01, e12, e20] = mesh.tri_edges[t].map(|e| midpoints[e]);
        let child = |vertices| Triangle {
            vertices,
            face: tri.face,
            root: tri.root,
        };
        // first sweep: (p2, p0, m01) and (p1, p2, m01); second sweep bisects
        // each child on its own refinement edge
        triangles.push(child([e01, p2, e20]));
        triangles.push(child([p0, e01, e20]));
        triangles.push(child([e01, p1, e12]));
        triangles.push(child([p2, e01, e12]));
    }
    SurfaceMesh::assemble(vertices, triangles, mesh.face_normals.clone()).expect("refinement preserves validity")
}

/// Affine element map, frame and metric data for one flat triangle.
#[derive(Debug, Clone)]
pub struct ElementGeometry {
    pub vertices: [Point; 3],
    /// Columns of the affine map `x = v0 + xi * jacobian[0] + eta * jacobian[1]`.
    pub jacobian: [Point; 2],
    pub area: f64,
    /// `sqrt(area)`.
    pub h: f64,
    /// Longest edge length.
    pub diameter: f64,
    pub normal: Point,
    /// In-plane orthonormal frame: `t1` along the first edge, `t2 = n x t1`.
    pub frame: [Point; 2],
    /// Unit tangents traversing the boundary counterclockwise; local edge `i`
    /// runs from vertex `i` to vertex `i + 1`.
    pub edge_tangents: [Point; 3],
    pub edge_lengths: [f64; 3],
    /// Maps reference gradients to frame gradients: `grad_frame = inv_jt * grad_ref`.
    inv_jt: Matrix2<f64>,
}

impl ElementGeometry {
    pub fn from_vertices(vertices: [Point; 3]) -> Result<Self> {
        Self::build(vertices, usize::MAX)
    }

    fn build(vertices: [Point; 3], tri: usize) -> Result<Self> {
        let [a, b, c] = vertices;
        let j0 = b - a;
        let j1 = c - a;
        let cross = j0.cross(&j1);
        let area = 0.5 * cross.norm();
        let scale = j0.norm_squared().max(j1.norm_squared());
        if area.is_nan() || area <= 1e-14 * scale {
            return Err(DpgError::DegenerateElement { tri, area });
        }
        let normal = cross / (2.0 * area);
        let t1 = j0.normalize();
        let t2 = normal.cross(&t1);
        let jf = Matrix2::new(j0.dot(&t1), j1.dot(&t1), j0.dot(&t2), j1.dot(&t2));
        let inv_jt = jf.transpose().try_inverse().ok_or(DpgError::DegenerateElement { tri, area })?;
        let edges = [b - a, c - b, a - c];
        let edge_lengths = edges.map(|e| e.norm());
        let edge_tangents = [0, 1, 2].map(|i| edges[i] / edge_lengths[i]);
        Ok(Self {
            vertices,
            jacobian: [j0, j1],
            area,
            h: area.sqrt(),
            diameter: edge_lengths.iter().cloned().fold(0.0, f64::max),
            normal,
            frame: [t1, t2],
            edge_tangents,
            edge_lengths,
            inv_jt,
        })
    }

    /// Physical point of reference coordinates `(xi, eta)`.
    #[inline]
    pub fn map(&self, xi: f64, eta: f64) -> Point {
        self.vertices[0] + self.jacobian[0] * xi + self.jacobian[1] * eta
    }

    /// Reference coordinates of the orthogonal projection of `x` onto the plane.
    pub fn to_reference(&self, x: &Point) -> [f64; 2] {
        let d = x - self.vertices[0];
        let (j0, j1) = (&self.jacobian[0], &self.jacobian[1]);
        let g = Matrix2::new(j0.dot(j0), j0.dot(j1), j1.dot(j0), j1.dot(j1));
        let rhs = nalgebra::Vector2::new(j0.dot(&d), j1.dot(&d));
        let s = g.try_inverse().expect("non-degenerate element") * rhs;
        [s[0], s[1]]
    }

    /// Gradient in frame coordinates `(t1, t2)` from a reference gradient.
    #[inline]
    pub fn frame_gradient(&self, grad_ref: [f64; 2]) -> [f64; 2] {
        let g = self.inv_jt * nalgebra::Vector2::new(grad_ref[0], grad_ref[1]);
        [g[0], g[1]]
    }

    /// Surface gradient as a 3D vector from a reference gradient.
    pub fn surface_gradient(&self, grad_ref: [f64; 2]) -> Point {
        let g = self.frame_gradient(grad_ref);
        self.frame[0] * g[0] + self.frame[1] * g[1]
    }

    /// Endpoints of local edge `i`.
    pub fn edge_endpoints(&self, i: usize) -> (Point, Point) {
        (self.vertices[i], self.vertices[(i + 1) % 3])
    }
}

/// Geometry of triangle `tri` of `mesh`.
pub fn element_geometry(mesh: &SurfaceMesh, tri: usize) -> Result<ElementGeometry> {
    if tri >= mesh.num_triangles() {
        return Err(DpgError::InvalidMesh(format!("triangle index {tri} out of range")));
    }
    ElementGeometry::build(mesh.corners(tri), tri)
}

/// Skeleton of a mesh: edge list with orientation data.
#[derive(Debug, Clone)]
pub struct Skeleton {
    /// Endpoints of every edge, low vertex index first.
    pub edges: Vec<[usize; 2]>,
    pub lengths: Vec<f64>,
    /// Unit tangent of the global orientation (low -> high vertex index).
    pub tangents: Vec<Point>,
    /// Incident `(triangle, local edge, sign)` entries per edge.
    pub incident: Vec<Vec<(usize, usize, i32)>>,
    /// `signs[t][i]`: orientation of local edge `i` of triangle `t`.
    pub signs: Vec<[i32; 3]>,
    pub boundary: Vec<bool>,
}

impl Skeleton {
    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    /// Local index of `edge` in triangle `tri`, if incident.
    pub fn local_index(&self, edge: usize, tri: usize) -> Option<usize> {
        self.incident
            .get(edge)?
            .iter()
            .find(|(t, _, _)| *t == tri)
            .map(|&(_, i, _)| i)
    }

    pub fn sign(&self, edge: usize, tri: usize) -> Option<i32> {
        self.incident
            .get(edge)?
            .iter()
            .find(|(t, _, _)| *t == tri)
            .map(|&(_, _, s)| s)
    }
}

pub fn skeleton(mesh: &SurfaceMesh) -> Skeleton {
    let verts = mesh.vertices();
    let mut lengths = Vec::with_capacity(mesh.num_edges());
    let mut tangents = Vec::with_capacity(mesh.num_edges());
    let mut incident = Vec::with_capacity(mesh.num_edges());
    for e in mesh.edges() {
        let d = verts[e.vertices[1]] - verts[e.vertices[0]];
        let len = d.norm();
        lengths.push(len);
        tangents.push(d / len);
        incident.push(e.incident.iter().map(|&(t, i)| (t, i, mesh.edge_sign(t, i))).collect());
    }
    let signs = (0..mesh.num_triangles())
        .map(|t| [0, 1, 2].map(|i| mesh.edge_sign(t, i)))
        .collect();
    Skeleton {
        edges: mesh.edges().iter().map(|e| e.vertices).collect(),
        lengths,
        tangents,
        incident,
        signs,
        boundary: mesh.edges().iter().map(|e| e.is_boundary()).collect(),
    }
}
