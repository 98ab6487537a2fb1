//! Manufactured exact solutions and `L^2` errors of the discrete trial
//! functions.

use rayon::prelude::*;

use crate::assembly::DofLayout;
use crate::error::{DpgError, Result};
use crate::local_fem::curl_in_frame;
use crate::mesh::{element_geometry, ElementGeometry, Point, SurfaceMesh};
use crate::potentials::{analytic_deg0, eval_single_layer_field, PiecewiseDensity, QuadratureConfig};
use crate::quadrature::{GaussRule, TriangleRule};

/// Exact solution built from a continuous piecewise-affine `phi` on the
/// initial mesh: `sigma = V curl phi` and `sigma_hat = sigma . t`.
#[derive(Debug, Clone)]
pub struct ExactSolution {
    coarse: Vec<ElementGeometry>,
    coarse_vertices: Vec<[usize; 3]>,
    nodal: Vec<f64>,
    /// `curl phi` on every initial triangle, frame components.
    curl: Vec<[f64; 2]>,
}

impl ExactSolution {
    /// `phi` with the given values at the vertices of `coarse`. It must vanish
    /// on the boundary of an open surface and have zero mean on a closed one.
    pub fn new(coarse: &SurfaceMesh, nodal: Vec<f64>) -> Result<Self> {
        if nodal.len() != coarse.vertices().len() {
            return Err(DpgError::DimensionMismatch {
                expected: coarse.vertices().len(),
                got: nodal.len(),
            });
        }
        if nodal.iter().any(|v| !v.is_finite()) {
            return Err(DpgError::InvalidExactSolution("non-finite nodal value".into()));
        }
        let geoms = (0..coarse.num_triangles())
            .map(|t| element_geometry(coarse, t))
            .collect::<Result<Vec<_>>>()?;
        let scale = nodal.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        if coarse.is_closed() {
            let mean: f64 = coarse
                .triangles()
                .iter()
                .zip(&geoms)
                .map(|(t, g)| g.area * t.vertices.iter().map(|&v| nodal[v]).sum::<f64>() / 3.0)
                .sum();
            if mean.abs() > 1e-12 * scale * coarse.total_area() {
                return Err(DpgError::InvalidExactSolution(format!("phi has nonzero mean {mean:e} on a closed surface")));
            }
        } else {
            for e in coarse.edges().iter().filter(|e| e.is_boundary()) {
                for &v in &e.vertices {
                    if nodal[v] != 0.0 {
                        return Err(DpgError::InvalidExactSolution(format!("phi is nonzero at boundary vertex {v}")));
                    }
                }
            }
        }
        let coarse_vertices: Vec<[usize; 3]> = coarse.triangles().iter().map(|t| t.vertices).collect();
        let curl = coarse_vertices
            .iter()
            .zip(&geoms)
            .map(|(v, g)| {
                let grad_ref = [nodal[v[1]] - nodal[v[0]], nodal[v[2]] - nodal[v[0]]];
                curl_in_frame(g.frame_gradient(grad_ref))
            })
            .collect();
        Ok(Self {
            coarse: geoms,
            coarse_vertices,
            nodal,
            curl,
        })
    }

    pub fn nodal_values(&self) -> &[f64] {
        &self.nodal
    }

    /// `phi` at `x` in the initial triangle `root`.
    pub fn phi(&self, root: usize, x: &Point) -> f64 {
        let [xi, eta] = self.coarse[root].to_reference(x);
        let v = self.coarse_vertices[root].map(|i| self.nodal[i]);
        v[0] * (1.0 - xi - eta) + v[1] * xi + v[2] * eta
    }

    /// `curl phi` as a piecewise-constant tangential density.
    pub fn curl_density(&self) -> PiecewiseDensity {
        PiecewiseDensity::constant(&self.curl)
    }

    /// `sigma = V curl phi` at `x`, in closed form.
    pub fn sigma(&self, x: &Point) -> Result<Point> {
        let mut s = Point::zeros();
        for (g, c) in self.coarse.iter().zip(&self.curl) {
            if c[0] != 0.0 || c[1] != 0.0 {
                s += (g.frame[0] * c[0] + g.frame[1] * c[1]) * analytic_deg0(&g.vertices, x)?;
            }
        }
        Ok(s)
    }

    /// `sigma` through the generic density evaluator, for cross-checks.
    pub fn sigma_with(&self, x: &Point, cfg: &QuadratureConfig) -> Result<Point> {
        eval_single_layer_field(&self.coarse, &self.curl_density(), x, cfg)
    }

    pub fn sigma_hat(&self, x: &Point, tangent: &Point) -> Result<f64> {
        Ok(self.sigma(x)?.dot(tangent))
    }
}

/// Quadrature used by the error functionals.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ErrorQuadrature {
    /// Exactness degree of the triangle rule.
    pub triangle_degree: usize,
    pub edge_points: usize,
}

impl Default for ErrorQuadrature {
    /// 7-point triangle rule, 4-point edge rule.
    fn default() -> Self {
        Self {
            triangle_degree: 5,
            edge_points: 4,
        }
    }
}

impl ErrorQuadrature {
    pub fn doubled(&self) -> Self {
        Self {
            triangle_degree: 2 * self.triangle_degree,
            edge_points: 2 * self.edge_points,
        }
    }
}

fn check_len(layout: &DofLayout, u: &[f64]) -> Result<()> {
    if u.len() != layout.n_trial() {
        return Err(DpgError::DimensionMismatch {
            expected: layout.n_trial(),
            got: u.len(),
        });
    }
    Ok(())
}

/// `||phi - phi_h||` over the mesh; `mesh` must be a refinement of the mesh
/// `exact` was built on.
pub fn l2_error_phi(mesh: &SurfaceMesh, layout: &DofLayout, u: &[f64], exact: &ExactSolution) -> Result<f64> {
    check_len(layout, u)?;
    // the integrand is quadratic
    let rule = TriangleRule::with_degree(2);
    let parts = (0..mesh.num_triangles())
        .into_par_iter()
        .map(|t| {
            let g = element_geometry(mesh, t)?;
            let root = mesh.triangles()[t].root;
            let ph = u[layout.phi(t)];
            Ok(rule
                .points
                .iter()
                .zip(&rule.weights)
                .map(|(p, &w)| {
                    let d = exact.phi(root, &g.map(p[0], p[1])) - ph;
                    w * 2.0 * g.area * d * d
                })
                .sum::<f64>())
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum::<f64>().sqrt())
}

/// `||sigma - sigma_h||` of the tangential fields.
pub fn l2_error_sigma(
    mesh: &SurfaceMesh,
    layout: &DofLayout,
    u: &[f64],
    exact: &ExactSolution,
    quad: &ErrorQuadrature,
) -> Result<f64> {
    l2_error_sigma_field(mesh, layout, u, |x| exact.sigma(x), quad)
}

/// `||sigma - sigma_h||` against an arbitrary field `sigma`; only its
/// tangential part on each element is compared.
pub fn l2_error_sigma_field<F>(mesh: &SurfaceMesh, layout: &DofLayout, u: &[f64], sigma: F, quad: &ErrorQuadrature) -> Result<f64>
where
    F: Fn(&Point) -> Result<Point> + Sync,
{
    check_len(layout, u)?;
    let rule = TriangleRule::with_degree(quad.triangle_degree);
    let parts = (0..mesh.num_triangles())
        .into_par_iter()
        .map(|t| {
            let g = element_geometry(mesh, t)?;
            let sh = g.frame[0] * u[layout.sigma(t, 0)] + g.frame[1] * u[layout.sigma(t, 1)];
            let mut acc = 0.0;
            for (p, &w) in rule.points.iter().zip(&rule.weights) {
                let s = sigma(&g.map(p[0], p[1]))?;
                let d = g.frame[0] * g.frame[0].dot(&s) + g.frame[1] * g.frame[1].dot(&s) - sh;
                acc += w * 2.0 * g.area * d.norm_squared();
            }
            Ok(acc)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum::<f64>().sqrt())
}

/// `||sigma_hat - sigma_hat_h||` over the skeleton, with `sigma_hat` taken in
/// the global edge orientation.
pub fn l2_error_sigma_hat(
    mesh: &SurfaceMesh,
    layout: &DofLayout,
    u: &[f64],
    exact: &ExactSolution,
    quad: &ErrorQuadrature,
) -> Result<f64> {
    l2_error_sigma_hat_field(mesh, layout, u, |x, t| exact.sigma_hat(x, t), quad)
}

/// `||sigma_hat - sigma_hat_h||` for a trace given as a function of the point
/// and the unit tangent of the edge in global orientation.
pub fn l2_error_sigma_hat_field<F>(mesh: &SurfaceMesh, layout: &DofLayout, u: &[f64], sigma_hat: F, quad: &ErrorQuadrature) -> Result<f64>
where
    F: Fn(&Point, &Point) -> Result<f64> + Sync,
{
    check_len(layout, u)?;
    let rule = GaussRule::new(quad.edge_points);
    let verts = mesh.vertices();
    let parts = mesh
        .edges()
        .par_iter()
        .enumerate()
        .map(|(e, edge)| {
            let (a, b) = (verts[edge.vertices[0]], verts[edge.vertices[1]]);
            let len = (b - a).norm();
            let t = (b - a) / len;
            let coef = u[layout.sigma_hat(e)];
            let mut acc = 0.0;
            for (&s, &w) in rule.points.iter().zip(&rule.weights) {
                let d = sigma_hat(&(a + (b - a) * s), &t)? - coef;
                acc += w * len * d * d;
            }
            Ok(acc)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum::<f64>().sqrt())
}
