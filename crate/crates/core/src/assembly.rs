//! Degrees of freedom, the rectangular DPG matrix `B`, the block-diagonal test
//! Gram matrix and load vectors.
//!
//! `B` is stored in three parts: a dense `(test dofs) x 5` block per element
//! for the local terms (`sigma` and `sigma_hat` columns), one dense block
//! coupling every `tau` dof to every `phi` dof through the single-layer
//! operator, and the rank-one `m_Gamma` term on closed surfaces.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{DpgError, Result};
use crate::error_analysis::ExactSolution;
use crate::local_fem::{basis_integrals, curl_in_frame, edge_jump_pairing, local_gram, LocalGramBlock, PolyBasis};
use crate::mesh::{element_geometry, skeleton, ElementGeometry, Point, SurfaceMesh};
use crate::potentials::{QuadratureConfig, Segment, SourceCache};
use crate::quadrature::{GaussRule, TriangleRule};

/// Global numbering of trial and test dofs.
///
/// Trial: `sigma` (two frame components per triangle), then `phi` (one per
/// triangle), then `sigma_hat` (one per edge). Test: one contiguous block per
/// triangle, `tau` (frame component major) followed by `v`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofLayout {
    pub n_triangles: usize,
    pub n_edges: usize,
    /// Degree increment `r`: `tau` has degree `r`, `v` degree `r + 1`.
    pub degree_increment: usize,
    tau_basis_dim: usize,
    v_basis_dim: usize,
}

impl DofLayout {
    pub fn new(mesh: &SurfaceMesh, degree_increment: usize) -> Result<Self> {
        if !(1..=3).contains(&degree_increment) {
            return Err(DpgError::UnsupportedDegree(degree_increment));
        }
        Ok(Self {
            n_triangles: mesh.num_triangles(),
            n_edges: mesh.num_edges(),
            degree_increment,
            tau_basis_dim: PolyBasis::new(degree_increment)?.dim(),
            v_basis_dim: PolyBasis::new(degree_increment + 1)?.dim(),
        })
    }

    pub fn tau_degree(&self) -> usize {
        self.degree_increment
    }

    pub fn v_degree(&self) -> usize {
        self.degree_increment + 1
    }

    /// Scalar basis size of one `tau` component.
    pub fn tau_basis_dim(&self) -> usize {
        self.tau_basis_dim
    }

    pub fn tau_dim(&self) -> usize {
        2 * self.tau_basis_dim
    }

    pub fn v_dim(&self) -> usize {
        self.v_basis_dim
    }

    /// Test dofs per element.
    pub fn test_block(&self) -> usize {
        self.tau_dim() + self.v_dim()
    }

    pub fn n_trial(&self) -> usize {
        3 * self.n_triangles + self.n_edges
    }

    pub fn n_test(&self) -> usize {
        self.test_block() * self.n_triangles
    }

    pub fn sigma(&self, tri: usize, component: usize) -> usize {
        2 * tri + component
    }

    pub fn phi(&self, tri: usize) -> usize {
        2 * self.n_triangles + tri
    }

    pub fn sigma_hat(&self, edge: usize) -> usize {
        3 * self.n_triangles + edge
    }

    pub fn tau(&self, tri: usize, component: usize, m: usize) -> usize {
        self.test_block() * tri + component * self.tau_basis_dim + m
    }

    pub fn v(&self, tri: usize, j: usize) -> usize {
        self.test_block() * tri + self.tau_dim() + j
    }

    /// Trial dof ranges of `sigma`, `phi` and `sigma_hat`.
    pub fn trial_ranges(&self) -> [std::ops::Range<usize>; 3] {
        let n = self.n_triangles;
        [0..2 * n, 2 * n..3 * n, 3 * n..self.n_trial()]
    }
}

/// The discrete bilinear form as an operator from trial to test coefficients.
#[derive(Debug, Clone)]
pub struct BMatrix {
    layout: DofLayout,
    /// Per element, `test_block x 5` column-major: `sigma_1`, `sigma_2`, then
    /// `sigma_hat` of local edges 0, 1, 2.
    local: Vec<Vec<f64>>,
    tri_edges: Vec<[usize; 3]>,
    /// Rows: `tau` dofs of all elements in test order; columns: triangles.
    nonlocal: Vec<f64>,
    /// `(area per triangle, int v_j per test dof)` on closed surfaces.
    mean: Option<(Vec<f64>, Vec<f64>)>,
}

const LOCAL_COLS: usize = 5;

impl BMatrix {
    pub fn layout(&self) -> &DofLayout {
        &self.layout
    }

    pub fn has_mean_term(&self) -> bool {
        self.mean.is_some()
    }

    /// `y = B x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        let l = &self.layout;
        let nb = l.test_block();
        let nt = l.tau_dim();
        let phi = &x[l.trial_ranges()[1].clone()];
        let mean_phi = self.mean.as_ref().map(|(areas, _)| dot(areas, phi));
        y.par_chunks_mut(nb).enumerate().for_each(|(t, yb)| {
            let mut cols = [x[l.sigma(t, 0)], x[l.sigma(t, 1)], 0.0, 0.0, 0.0];
            for (c, &e) in cols[2..].iter_mut().zip(&self.tri_edges[t]) {
                *c = x[l.sigma_hat(e)];
            }
            let block = &self.local[t];
            for (i, yi) in yb.iter_mut().enumerate() {
                *yi = (0..LOCAL_COLS).map(|c| block[c * nb + i] * cols[c]).sum();
            }
            let n = self.layout.n_triangles;
            for (i, yi) in yb[..nt].iter_mut().enumerate() {
                let row = &self.nonlocal[(t * nt + i) * n..(t * nt + i + 1) * n];
                *yi += dot(row, phi);
            }
            if let (Some((_, vint)), Some(m)) = (&self.mean, mean_phi) {
                for (yi, w) in yb.iter_mut().zip(&vint[t * nb..(t + 1) * nb]) {
                    *yi += w * m;
                }
            }
        });
    }

    /// `x = B^T y`.
    pub fn apply_transpose(&self, y: &[f64], x: &mut [f64]) {
        let l = &self.layout;
        let n = l.n_triangles;
        let nb = l.test_block();
        let nt = l.tau_dim();
        x.iter_mut().for_each(|v| *v = 0.0);
        // local parts; sigma_hat columns are shared between elements
        let local: Vec<[f64; LOCAL_COLS]> = (0..n)
            .into_par_iter()
            .map(|t| {
                let yb = &y[t * nb..(t + 1) * nb];
                let block = &self.local[t];
                [0, 1, 2, 3, 4].map(|c| dot(&block[c * nb..(c + 1) * nb], yb))
            })
            .collect();
        for (t, vals) in local.iter().enumerate() {
            x[l.sigma(t, 0)] = vals[0];
            x[l.sigma(t, 1)] = vals[1];
            for (k, &e) in self.tri_edges[t].iter().enumerate() {
                x[l.sigma_hat(e)] += vals[2 + k];
            }
        }
        // nonlocal part, in column chunks for contiguous access
        let phi = &mut x[l.trial_ranges()[1].clone()];
        const CHUNK: usize = 64;
        phi.par_chunks_mut(CHUNK).enumerate().for_each(|(c, out)| {
            let c0 = c * CHUNK;
            for t in 0..n {
                let yb = &y[t * nb..t * nb + nt];
                for (i, yi) in yb.iter().enumerate() {
                    let row = &self.nonlocal[(t * nt + i) * n + c0..(t * nt + i) * n + c0 + out.len()];
                    for (o, r) in out.iter_mut().zip(row) {
                        *o += r * yi;
                    }
                }
            }
        });
        if let Some((areas, vint)) = &self.mean {
            let s = dot(vint, y);
            for (p, a) in phi.iter_mut().zip(areas) {
                *p += a * s;
            }
        }
    }

    /// Column `j` of `B`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.layout.n_trial()];
        x[j] = 1.0;
        let mut y = vec![0.0; self.layout.n_test()];
        self.apply(&x, &mut y);
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let l = &self.layout;
        let mut m = DMatrix::zeros(l.n_test(), l.n_trial());
        for j in 0..l.n_trial() {
            m.set_column(j, &nalgebra::DVector::from_vec(self.column(j)));
        }
        m
    }

    /// Nonzero entries as `row col value` lines.
    pub fn write_coo(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for j in 0..self.layout.n_trial() {
            for (i, v) in self.column(j).iter().enumerate() {
                if *v != 0.0 {
                    writeln!(out, "{i} {j} {v:.16e}").expect("writing to a string");
                }
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(out.as_bytes())?;
        Ok(())
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Block-diagonal test Gram matrix with factorized blocks.
#[derive(Debug, Clone)]
pub struct Gram {
    pub blocks: Vec<LocalGramBlock>,
    block: usize,
}

impl Gram {
    pub fn block_dim(&self) -> usize {
        self.block
    }

    /// `x <- G^{-1} x`.
    pub fn solve_in_place(&self, x: &mut [f64]) {
        x.par_chunks_mut(self.block)
            .zip(&self.blocks)
            .for_each(|(xb, g)| g.solve_in_place(xb));
    }

    /// `y = G x`.
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.par_chunks_mut(self.block)
            .zip(x.par_chunks(self.block))
            .zip(&self.blocks)
            .for_each(|((yb, xb), g)| g.apply(xb, yb));
    }
}

/// `B`, the test Gram matrix and the load vector of one discrete problem.
#[derive(Debug, Clone)]
pub struct SystemMatrices {
    pub b: BMatrix,
    pub gram: Gram,
    pub load: Vec<f64>,
}

impl SystemMatrices {
    pub fn layout(&self) -> &DofLayout {
        self.b.layout()
    }
}

fn geometries(mesh: &SurfaceMesh) -> Result<Vec<ElementGeometry>> {
    (0..mesh.num_triangles()).map(|t| element_geometry(mesh, t)).collect()
}

/// Edges per chunk of the nonlocal assembly: bounds the memory of the
/// per-edge moment rows held at once.
const EDGE_CHUNK: usize = 64;

/// Assemble `B` for
/// `<sigma, tau + curl v> - <phi, curl V tau> + <sigma_hat, [v]> + m(phi, v)`.
pub fn assemble_b(mesh: &SurfaceMesh, layout: &DofLayout, cfg: &QuadratureConfig) -> Result<BMatrix> {
    cfg.validate()?;
    if layout.n_triangles != mesh.num_triangles() || layout.n_edges != mesh.num_edges() {
        return Err(DpgError::DimensionMismatch {
            expected: layout.n_trial(),
            got: 3 * mesh.num_triangles() + mesh.num_edges(),
        });
    }
    let geoms = geometries(mesh)?;
    let skel = skeleton(mesh);
    let n = mesh.num_triangles();
    let nb = layout.test_block();
    let nt = layout.tau_dim();
    let tau_basis = PolyBasis::new(layout.tau_degree())?;
    let v_basis = PolyBasis::new(layout.v_degree())?;
    let dim = tau_basis.dim();

    let tri_edges: Vec<[usize; 3]> = (0..n).map(|t| mesh.triangle_edges(t)).collect();
    let local = (0..n)
        .into_par_iter()
        .map(|t| {
            let g = &geoms[t];
            let mut block = vec![0.0; nb * LOCAL_COLS];
            // <sigma, tau>
            let psi = basis_integrals(g, &tau_basis);
            for k in 0..2 {
                for (m, p) in psi.iter().enumerate() {
                    block[k * nb + k * dim + m] = *p;
                }
            }
            // <sigma, curl v>
            let curl = crate::local_fem::curl_integrals(g, &v_basis);
            for (j, c) in curl.iter().enumerate() {
                block[nt + j] = c[0];
                block[nb + nt + j] = c[1];
            }
            // <sigma_hat, [v]>
            for (k, &e) in tri_edges[t].iter().enumerate() {
                let pairing = edge_jump_pairing(&skel, e, t, g, &v_basis)?;
                for (j, p) in pairing.iter().enumerate() {
                    block[(2 + k) * nb + nt + j] = *p;
                }
            }
            Ok(block)
        })
        .collect::<Result<Vec<_>>>()?;

    // -<phi, curl V tau> = -sum_T phi_T sum_{e in dT} sign(T, e) int_e (V tau) . t_e
    let caches: Vec<SourceCache> = geoms.iter().map(|g| SourceCache::new(g, &tau_basis, cfg)).collect();
    let verts = mesh.vertices();
    let mut nonlocal = vec![0.0; n * nt * n];
    let edges: Vec<usize> = (0..mesh.num_edges()).collect();
    for chunk in edges.chunks(EDGE_CHUNK) {
        let rows = chunk
            .par_iter()
            .map(|&e| {
                let [a, b] = skel.edges[e];
                let seg = Segment::new(verts[a], verts[b]);
                let mut row = vec![0.0; n * dim];
                for (s, cache) in caches.iter().enumerate() {
                    cache.segment_moments(&seg, cfg, &mut row[s * dim..(s + 1) * dim])?;
                }
                Ok(row)
            })
            .collect::<Result<Vec<_>>>()?;
        for (&e, row) in chunk.iter().zip(&rows) {
            let t_e = skel.tangents[e];
            for &(t, _, sign) in &skel.incident[e] {
                for (s, g) in geoms.iter().enumerate() {
                    for k in 0..2 {
                        let c = sign as f64 * t_e.dot(&g.frame[k]);
                        for m in 0..dim {
                            nonlocal[(s * nt + k * dim + m) * n + t] -= c * row[s * dim + m];
                        }
                    }
                }
            }
        }
    }

    let mean = if mesh.is_closed() {
        let areas = geoms.iter().map(|g| g.area).collect();
        let mut vint = vec![0.0; layout.n_test()];
        for (t, g) in geoms.iter().enumerate() {
            for (j, w) in basis_integrals(g, &v_basis).into_iter().enumerate() {
                vint[layout.v(t, j)] = w;
            }
        }
        Some((areas, vint))
    } else {
        None
    };

    Ok(BMatrix {
        layout: *layout,
        local,
        tri_edges,
        nonlocal,
        mean,
    })
}

pub fn assemble_gram(mesh: &SurfaceMesh, layout: &DofLayout) -> Result<Gram> {
    let blocks = (0..mesh.num_triangles())
        .into_par_iter()
        .map(|t| local_gram(&element_geometry(mesh, t)?, t, layout.tau_degree(), layout.v_degree()))
        .collect::<Result<Vec<_>>>()?;
    Ok(Gram {
        blocks,
        block: layout.test_block(),
    })
}

/// Load `<f, v>` for a scalar right-hand side; the `tau` entries vanish. On a
/// closed surface `f` must have zero mean.
pub fn assemble_load_analytic<F>(mesh: &SurfaceMesh, layout: &DofLayout, f: F) -> Result<Vec<f64>>
where
    F: Fn(&Point) -> f64 + Sync,
{
    let v_basis = PolyBasis::new(layout.v_degree())?;
    let rule = TriangleRule::with_degree(layout.v_degree() + 6);
    let nb = layout.test_block();
    let mut load = vec![0.0; layout.n_test()];
    let stats = load
        .par_chunks_mut(nb)
        .enumerate()
        .map(|(t, fb)| {
            let g = element_geometry(mesh, t)?;
            let mut vals = vec![0.0; v_basis.dim()];
            let (mut mean, mut sq) = (0.0, 0.0);
            for (p, &w) in rule.points.iter().zip(&rule.weights) {
                let fx = f(&g.map(p[0], p[1]));
                let wj = w * 2.0 * g.area;
                v_basis.eval(p[0], p[1], &mut vals);
                for (o, v) in fb[layout.tau_dim()..].iter_mut().zip(&vals) {
                    *o += wj * fx * v;
                }
                mean += wj * fx;
                sq += wj * fx * fx;
            }
            Ok((mean, sq))
        })
        .collect::<Result<Vec<_>>>()?;
    if mesh.is_closed() {
        let mean: f64 = stats.iter().map(|s| s.0).sum();
        let norm = stats.iter().map(|s| s.1).sum::<f64>().sqrt();
        let scale = norm * mesh.total_area().sqrt();
        if mean.abs() > 1e-10 * scale {
            return Err(DpgError::NonZeroMean { mean, scale });
        }
    }
    Ok(load)
}

/// Quadrature of the manufactured load.
///
/// `sigma = V curl phi` behaves like `d log d` across the edges of the
/// initial mesh; tanh-sinh rules cluster toward element boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LoadQuadrature {
    /// Points per direction of the tanh-sinh rules.
    pub points: usize,
}

impl Default for LoadQuadrature {
    fn default() -> Self {
        Self { points: 40 }
    }
}

/// Load `<curl sigma, v> = <sigma, curl v> + <sigma . t, [v]>` for the
/// manufactured solution `sigma = V curl phi`; the `tau` entries vanish.
pub fn assemble_load_manufactured(
    mesh: &SurfaceMesh,
    layout: &DofLayout,
    exact: &ExactSolution,
    quad: &LoadQuadrature,
) -> Result<Vec<f64>> {
    let v_basis = PolyBasis::new(layout.v_degree())?;
    let rule = TriangleRule::tanh_sinh(quad.points);
    let edge_rule = GaussRule::tanh_sinh(quad.points);
    let skel = skeleton(mesh);
    let verts = mesh.vertices();
    // sigma . t_e at the edge points, global orientation
    let traces = skel
        .edges
        .par_iter()
        .zip(&skel.tangents)
        .map(|(&[a, b], t)| {
            edge_rule
                .points
                .iter()
                .map(|&s| exact.sigma_hat(&(verts[a] + (verts[b] - verts[a]) * s), t))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let nb = layout.test_block();
    let nt = layout.tau_dim();
    let mut load = vec![0.0; layout.n_test()];
    load.par_chunks_mut(nb).enumerate().try_for_each(|(t, fb)| -> Result<()> {
        let g = element_geometry(mesh, t)?;
        let dim = v_basis.dim();
        let mut vals = vec![0.0; dim];
        let mut grads = vec![[0.0; 2]; dim];
        for (p, &w) in rule.points.iter().zip(&rule.weights) {
            let s = exact.sigma(&g.map(p[0], p[1]))?;
            let sf = [s.dot(&g.frame[0]), s.dot(&g.frame[1])];
            let wj = w * 2.0 * g.area;
            v_basis.eval_with_grad(p[0], p[1], &mut vals, &mut grads);
            for (o, gr) in fb[nt..].iter_mut().zip(&grads) {
                let c = curl_in_frame(g.frame_gradient(*gr));
                *o += wj * (sf[0] * c[0] + sf[1] * c[1]);
            }
        }
        let tri = mesh.triangles()[t].vertices;
        for (k, &e) in mesh.triangle_edges(t).iter().enumerate() {
            let sign = skel.signs[t][k] as f64;
            // local edge k runs from vertex k to k + 1; the cached points follow
            // the global orientation
            let forward = sign > 0.0;
            debug_assert_eq!(forward, tri[k] < tri[(k + 1) % 3]);
            for (q, (&s, &w)) in edge_rule.points.iter().zip(&edge_rule.weights).enumerate() {
                let sl = if forward { s } else { 1.0 - s };
                let r = crate::local_fem::edge_reference_point(k, sl);
                v_basis.eval(r[0], r[1], &mut vals);
                let wt = sign * w * skel.lengths[e] * traces[e][q];
                for (o, v) in fb[nt..].iter_mut().zip(&vals) {
                    *o += wt * v;
                }
            }
        }
        Ok(())
    })?;
    Ok(load)
}
