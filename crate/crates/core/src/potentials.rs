//! Single-layer potential of polynomial densities on flat triangles.
//!
//! Three routes are provided:
//! - the closed-form potential of a constant density ([`analytic_deg0`]),
//! - Duffy-regularized tensor Gauss for arbitrary polynomial densities when the
//!   target is close to the source, plain triangle Gauss otherwise
//!   ([`SourceCache::moments`]),
//! - line integrals of the potential along a target edge with dyadic grading
//!   toward endpoints that touch the source ([`SourceCache::edge_moments`]).

use std::f64::consts::PI;

use crate::error::{DpgError, Result};
use crate::local_fem::PolyBasis;
use crate::mesh::{ElementGeometry, Point};
use crate::quadrature::{adaptive_triangle, GaussRule, TriangleRule};

const FOUR_PI: f64 = 4.0 * PI;
/// Geometric grading ratio for near-singular directions.
const GRADING: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureConfig {
    /// Polynomial exactness of the far-field triangle rule.
    pub far_degree: usize,
    /// Gauss points per direction of the Duffy tensor rule.
    pub duffy_order: usize,
    /// Near-field threshold in multiples of the source diameter.
    pub near_threshold: f64,
    /// Gauss points per outer edge sub-interval.
    pub edge_order: usize,
    /// Cap on grading levels and on adaptive bisection depth.
    pub max_depth: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self::accurate()
    }
}

impl QuadratureConfig {
    pub fn accurate() -> Self {
        Self {
            far_degree: 7,
            duffy_order: 12,
            near_threshold: 2.0,
            edge_order: 8,
            max_depth: 12,
        }
    }

    pub fn fast() -> Self {
        Self {
            far_degree: 5,
            duffy_order: 8,
            near_threshold: 1.5,
            edge_order: 6,
            max_depth: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.far_degree == 0 || self.duffy_order == 0 || self.edge_order == 0 || self.max_depth == 0 {
            return Err(DpgError::Config("quadrature orders must be at least 1".into()));
        }
        if self.near_threshold.is_nan() || self.near_threshold <= 0.0 {
            return Err(DpgError::Config("near-field threshold must be positive".into()));
        }
        Ok(())
    }
}

/// Closest point of the triangle `(a, b, c)` to `p`, with its barycentric
/// coordinates.
pub fn closest_point(p: &Point, a: &Point, b: &Point, c: &Point) -> (Point, [f64; 3]) {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return (*a, [1.0, 0.0, 0.0]);
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return (*b, [0.0, 1.0, 0.0]);
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        let v = d1 / (d1 - d3);
        return (a + ab * v, [1.0 - v, v, 0.0]);
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return (*c, [0.0, 0.0, 1.0]);
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        let w = d2 / (d2 - d6);
        return (a + ac * w, [1.0 - w, 0.0, w]);
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        let w = (d4 - d3) / ((d4 - d3) + (d5 - d6));
        return (b + (c - b) * w, [0.0, 1.0 - w, w]);
    }
    let denom = 1.0 / (va + vb + vc);
    let v = vb * denom;
    let w = vc * denom;
    (a + ab * v + ac * w, [1.0 - v - w, v, w])
}

/// `int_T 1 / (4 pi |x - y|) dy` in closed form (edge-wise logarithms and
/// arctangents of the flat-triangle potential).
///
/// Valid for any `x`; on the triangle, its edges or vertices the vanishing
/// factors of the removable singularities are dropped.
pub fn analytic_deg0(tri: &[Point; 3], x: &Point) -> Result<f64> {
    let cross = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
    let area2 = cross.norm();
    if area2.is_nan() || area2 <= 0.0 {
        return Err(DpgError::DegenerateElement { tri: usize::MAX, area: 0.5 * area2 });
    }
    let n = cross / area2;
    let d = (x - tri[0]).dot(&n);
    let ad = d.abs();
    let p = x - n * d;
    let mut sum = 0.0;
    for i in 0..3 {
        let va = tri[i];
        let vb = tri[(i + 1) % 3];
        let edge = vb - va;
        let len = edge.norm();
        let s = edge / len;
        let m = s.cross(&n);
        let t0 = (va - p).dot(&m);
        let sm = (va - p).dot(&s);
        let sp = (vb - p).dot(&s);
        let rm = (x - va).norm();
        let rp = (x - vb).norm();
        let r0sq = t0 * t0 + d * d;
        if t0.abs() > 1e-15 * len {
            // s + R, rewritten as R0^2 / (R - s) when s < 0 to avoid cancellation
            let f = |s: f64, r: f64| if s > 0.0 { s + r } else { r0sq / (r - s) };
            sum += t0 * (f(sp, rp).ln() - f(sm, rm).ln());
        }
        if ad > 1e-15 * len {
            sum -= ad * ((t0 * sp / (r0sq + ad * rp)).atan() - (t0 * sm / (r0sq + ad * rm)).atan());
        }
    }
    let v = sum / FOUR_PI;
    if !v.is_finite() {
        return Err(DpgError::NonFinitePotential { target: [x.x, x.y, x.z] });
    }
    Ok(v)
}

/// Break points in `[0, 1]` graded geometrically toward `center`, down to a
/// smallest spacing of about `scale` (at most `depth` levels per side).
fn graded_breaks(center: f64, scale: f64, depth: usize) -> Vec<f64> {
    let mut breaks = vec![0.0, 1.0];
    for (lo, hi) in [(0.0, center), (center, 1.0)] {
        let span = hi - lo;
        if span <= 0.0 {
            continue;
        }
        let mut off = span;
        for _ in 0..depth {
            off *= GRADING;
            if off < scale {
                break;
            }
            if lo == 0.0 && hi == center {
                breaks.push(center - off);
            } else {
                breaks.push(center + off);
            }
        }
        if center > 0.0 && center < 1.0 {
            breaks.push(center);
        }
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    breaks
}

/// Precomputed data for integrating against one source triangle.
#[derive(Debug, Clone)]
pub struct SourceCache<'a> {
    pub geom: &'a ElementGeometry,
    pub basis: &'a PolyBasis,
    far_points: Vec<Point>,
    /// `weight * jacobian * psi_m(point)`, point-major.
    far_weights: Vec<f64>,
    far_rule: TriangleRule,
    duffy: GaussRule,
    edge: GaussRule,
    centroid: Point,
    radius: f64,
    /// Angular and radial rules of the polar rules for touching segments.
    singular: GaussRule,
    radial: Vec<(f64, f64)>,
}

impl<'a> SourceCache<'a> {
    pub fn new(geom: &'a ElementGeometry, basis: &'a PolyBasis, cfg: &QuadratureConfig) -> Self {
        let rule = TriangleRule::with_degree(cfg.far_degree.max(basis.degree()));
        let dim = basis.dim();
        let mut far_points = Vec::with_capacity(rule.len());
        let mut far_weights = Vec::with_capacity(rule.len() * dim);
        let mut vals = vec![0.0; dim];
        for (p, &w) in rule.points.iter().zip(&rule.weights) {
            far_points.push(geom.map(p[0], p[1]));
            basis.eval(p[0], p[1], &mut vals);
            far_weights.extend(vals.iter().map(|v| w * 2.0 * geom.area * v));
        }
        let duffy = GaussRule::new(cfg.duffy_order);
        let edge = GaussRule::new(cfg.edge_order);
        let centroid = (geom.vertices[0] + geom.vertices[1] + geom.vertices[2]) / 3.0;
        let radius = geom.vertices.iter().map(|v| (v - centroid).norm()).fold(0.0, f64::max);
        let singular = GaussRule::new(cfg.duffy_order + SINGULAR_EXTRA_ORDER);
        let radial = power_rule(&singular, 4, 0.5);
        Self {
            geom,
            basis,
            far_points,
            far_weights,
            far_rule: rule,
            duffy,
            edge,
            centroid,
            radius,
            singular,
            radial,
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    /// Distance from `x` to the source triangle.
    pub fn distance(&self, x: &Point) -> f64 {
        let [a, b, c] = &self.geom.vertices;
        (x - closest_point(x, a, b, c).0).norm()
    }

    /// Adds `int_S psi_m(y) / (4 pi |x - y|) dy` to `out[m]` for all basis
    /// functions.
    pub fn moments(&self, x: &Point, cfg: &QuadratureConfig, out: &mut [f64]) -> Result<()> {
        let [a, b, c] = &self.geom.vertices;
        let (q, bary) = closest_point(x, a, b, c);
        let dist = (x - q).norm();
        if dist >= cfg.near_threshold * self.geom.diameter {
            self.far_moments(x, out);
        } else if dist <= 1e-12 * self.geom.diameter {
            // rounding-level offsets: evaluate on the source itself
            self.duffy_moments(&q, [bary[1], bary[2]], &q, 0.0, cfg, out);
        } else {
            self.duffy_moments(x, [bary[1], bary[2]], &q, dist, cfg, out);
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(DpgError::NonFinitePotential { target: [x.x, x.y, x.z] });
        }
        Ok(())
    }

    fn far_moments(&self, x: &Point, out: &mut [f64]) {
        let dim = self.dim();
        for (y, w) in self.far_points.iter().zip(self.far_weights.chunks_exact(dim)) {
            let g = 1.0 / (FOUR_PI * (x - y).norm());
            for (o, wi) in out.iter_mut().zip(w) {
                *o += g * wi;
            }
        }
    }

    /// Split the source at the closest point `q` (reference coordinates
    /// `q_ref`) into triangles with apex `q` and integrate each in polar
    /// coordinates around `q`. The radial direction is graded toward the apex
    /// when `x` is off the source, the angular one toward angles where the
    /// opposite edge is nearly parallel to the ray.
    fn duffy_moments(&self, x: &Point, q_ref: [f64; 2], q: &Point, dist: f64, cfg: &QuadratureConfig, out: &mut [f64]) {
        const REF: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];
        let dim = self.dim();
        let mut vals = [0.0; 15];
        for i in 0..3 {
            let ra = REF[i];
            let rb = REF[(i + 1) % 3];
            let pa = self.geom.vertices[i];
            let pb = self.geom.vertices[(i + 1) % 3];
            let e = pb - pa;
            let len = e.norm();
            let s = e / len;
            let foot = pa + s * (q - pa).dot(&s);
            let h = (foot - q).norm();
            if h < 1e-12 * len {
                continue;
            }
            let nd = (foot - q) / h;
            let theta_a = (pa - q).dot(&s).atan2(h);
            let theta_b = (pb - q).dot(&s).atan2(h);
            let span = theta_b - theta_a;
            let wmax = (pa - q).norm().max((pb - q).norm());
            let u_breaks = if dist > 0.0 {
                graded_breaks(0.0, dist / wmax, cfg.max_depth)
            } else {
                vec![0.0, 1.0]
            };
            let mut t_breaks = graded_breaks(0.0, theta_a.cos() / span, cfg.max_depth);
            t_breaks.extend(graded_breaks(1.0, theta_b.cos() / span, cfg.max_depth));
            t_breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
            t_breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
            for tw in t_breaks.windows(2) {
                let (t0, t1) = (tw[0], tw[1]);
                for (&st, &wt) in self.duffy.points.iter().zip(&self.duffy.weights) {
                    let theta = theta_a + span * (t0 + st * (t1 - t0));
                    let r_max = h / theta.cos();
                    // position of the ray's exit point along the edge
                    let v = ((q - pa).dot(&s) + h * theta.tan()) / len;
                    let dir_ref = [ra[0] + v * (rb[0] - ra[0]) - q_ref[0], ra[1] + v * (rb[1] - ra[1]) - q_ref[1]];
                    let dir = (nd * theta.cos() + s * theta.sin()) * r_max;
                    let wtheta = wt * (t1 - t0) * span * r_max * r_max;
                    for uw in u_breaks.windows(2) {
                        let (u0, u1) = (uw[0], uw[1]);
                        for (&su, &wu) in self.duffy.points.iter().zip(&self.duffy.weights) {
                            let u = u0 + su * (u1 - u0);
                            let y = q + dir * u;
                            let w = wtheta * wu * (u1 - u0) * u;
                            let g = w / (FOUR_PI * (x - y).norm());
                            self.basis.eval(q_ref[0] + u * dir_ref[0], q_ref[1] + u * dir_ref[1], &mut vals[..dim]);
                            for (o, p) in out.iter_mut().zip(&vals[..dim]) {
                                *o += g * p;
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adds `int_{[a, b]} int_S psi_m(y) / (4 pi |x - y|) dy ds_x` to `out[m]`.
    ///
    /// Endpoints lying on the source are approached by dyadic grading;
    /// otherwise sub-intervals are bisected until each is separated from the
    /// source by at least its own length.
    pub fn edge_moments(&self, a: &Point, b: &Point, cfg: &QuadratureConfig, out: &mut [f64]) -> Result<()> {
        let len = (b - a).norm();
        let tol = 1e-10 * self.geom.diameter.max(len);
        let touch_a = self.distance(a) <= tol;
        let touch_b = self.distance(b) <= tol;
        let mut segments: Vec<(f64, f64)> = Vec::new();
        if touch_a || touch_b {
            let graded = |segments: &mut Vec<(f64, f64)>, lo: f64, hi: f64, toward_lo: bool| {
                let (near, mut far) = if toward_lo { (lo, hi) } else { (hi, lo) };
                for _ in 0..cfg.max_depth {
                    let mid = 0.5 * (near + far);
                    segments.push(if toward_lo { (mid, far) } else { (far, mid) });
                    far = mid;
                }
                segments.push(if toward_lo { (near, far) } else { (far, near) });
            };
            match (touch_a, touch_b) {
                (true, true) => {
                    graded(&mut segments, 0.0, 0.5, true);
                    graded(&mut segments, 0.5, 1.0, false);
                }
                (true, false) => graded(&mut segments, 0.0, 1.0, true),
                _ => graded(&mut segments, 0.0, 1.0, false),
            }
        } else {
            let mut stack = vec![(0.0, 1.0, 0usize)];
            while let Some((s0, s1, depth)) = stack.pop() {
                let seg_len = (s1 - s0) * len;
                let mid = a + (b - a) * (0.5 * (s0 + s1));
                let sep = self.distance(&mid) - 0.5 * seg_len;
                let far = sep >= cfg.near_threshold * self.geom.diameter;
                if far || seg_len <= sep {
                    segments.push((s0, s1));
                } else if depth >= cfg.max_depth {
                    let mut partial = vec![0.0; self.dim()];
                    self.integrate_segments(a, b, &[(0.0, 1.0)], cfg, &mut partial)?;
                    return Err(DpgError::QuadratureNotConverged {
                        context: "outer edge rule reached the depth cap".into(),
                        partial: partial.iter().sum(),
                    });
                } else {
                    let sm = 0.5 * (s0 + s1);
                    stack.push((sm, s1, depth + 1));
                    stack.push((s0, sm, depth + 1));
                }
            }
            segments.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        }
        self.integrate_segments(a, b, &segments, cfg, out)
    }

    fn integrate_segments(
        &self,
        a: &Point,
        b: &Point,
        segments: &[(f64, f64)],
        cfg: &QuadratureConfig,
        out: &mut [f64],
    ) -> Result<()> {
        let len = (b - a).norm();
        let dim = self.dim();
        let mut buf = [0.0; 15];
        for &(s0, s1) in segments {
            for (&s, &w) in self.edge.points.iter().zip(&self.edge.weights) {
                let x = a + (b - a) * (s0 + s * (s1 - s0));
                buf[..dim].iter_mut().for_each(|v| *v = 0.0);
                self.moments(&x, cfg, &mut buf[..dim])?;
                let scale = w * (s1 - s0) * len;
                for (o, m) in out.iter_mut().zip(&buf[..dim]) {
                    *o += scale * m;
                }
            }
        }
        Ok(())
    }
}

/// A straight segment with its unit tangent and length.
#[derive(Debug, Clone, Copy)]
pub struct Segment {
    pub a: Point,
    pub b: Point,
    tangent: Point,
    len: f64,
}

impl Segment {
    pub fn new(a: Point, b: Point) -> Self {
        let len = (b - a).norm();
        Self {
            a,
            b,
            tangent: (b - a) / len,
            len,
        }
    }

    pub fn len(&self) -> f64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0.0
    }

    fn shifted(&self, origin: &Point) -> Self {
        Self {
            a: self.a - origin,
            b: self.b - origin,
            ..*self
        }
    }

    fn point_distance(&self, y: &Point) -> f64 {
        let s = (y - self.a).dot(&self.tangent).clamp(0.0, self.len);
        (self.a + self.tangent * s - y).norm()
    }

    /// `int_{[a, b]} 1 / (4 pi |x - y|) ds_x` in closed form.
    pub fn potential(&self, y: &Point) -> f64 {
        let da = self.a - y;
        let db = self.b - y;
        let sa = da.dot(&self.tangent);
        let sb = sa + self.len;
        let ra = da.norm();
        let rb = db.norm();
        let v = if sa >= 0.0 {
            ((sb + rb) / (sa + ra)).ln()
        } else if sb <= 0.0 {
            ((ra - sa) / (rb - sb)).ln()
        } else {
            // the distance to the line from the nearer endpoint avoids cancellation
            let near = if ra <= rb { da } else { db };
            // points within rounding of the line carry negligible weight
            let rho2 = near.cross(&self.tangent).norm_squared().max(f64::MIN_POSITIVE);
            ((sb + rb) * (ra - sa) / rho2).ln()
        };
        v / FOUR_PI
    }
}

/// Potential of a unit line density on `[a, b]` at `y`.
pub fn line_potential(a: &Point, b: &Point, y: &Point) -> f64 {
    Segment::new(*a, *b).potential(y)
}

/// Squared distance between segments `[p1, q1]` and `[p2, q2]`.
fn segment_segment_dist2(p1: &Point, q1: &Point, p2: &Point, q2: &Point) -> f64 {
    let d1 = q1 - p1;
    let d2 = q2 - p2;
    let r = p1 - p2;
    let a = d1.norm_squared();
    let e = d2.norm_squared();
    let f = d2.dot(&r);
    let c = d1.dot(&r);
    let b = d1.dot(&d2);
    let denom = a * e - b * b;
    let mut s = if denom > 1e-14 * a * e { ((b * f - c * e) / denom).clamp(0.0, 1.0) } else { 0.0 };
    let mut t = (b * s + f) / e;
    if t < 0.0 {
        t = 0.0;
        s = (-c / a).clamp(0.0, 1.0);
    } else if t > 1.0 {
        t = 1.0;
        s = ((b - c) / a).clamp(0.0, 1.0);
    }
    (p1 + d1 * s - (p2 + d2 * t)).norm_squared()
}

/// Distance between the segment `[a, b]` and the triangle `tri`.
pub fn segment_triangle_distance(a: &Point, b: &Point, tri: &[Point; 3]) -> f64 {
    let n = (tri[1] - tri[0]).cross(&(tri[2] - tri[0]));
    let da = (a - tri[0]).dot(&n);
    let db = (b - tri[0]).dot(&n);
    if da * db < 0.0 {
        // the segment pierces the plane; check whether inside the triangle
        let p = a + (b - a) * (da / (da - db));
        let (q, _) = closest_point(&p, &tri[0], &tri[1], &tri[2]);
        if (p - q).norm() <= 1e-14 * (tri[1] - tri[0]).norm() {
            return 0.0;
        }
    }
    let mut d2 = (a - closest_point(a, &tri[0], &tri[1], &tri[2]).0)
        .norm_squared()
        .min((b - closest_point(b, &tri[0], &tri[1], &tri[2]).0).norm_squared());
    for i in 0..3 {
        d2 = d2.min(segment_segment_dist2(a, b, &tri[i], &tri[(i + 1) % 3]));
    }
    d2.sqrt()
}

impl SourceCache<'_> {
    /// Adds `int_{[a, b]} int_S psi_m(y) / (4 pi |x - y|) dy ds_x` to `out[m]`
    /// by integrating the closed-form line potential over the source.
    ///
    /// Segments sharing an edge or a vertex with the source use polar rules
    /// around the shared vertex whose radial and angular variables are
    /// transformed to absorb the logarithmic singularity; other near segments
    /// trigger subdivision of the source until each piece is well separated.
    pub fn segment_moments(&self, seg: &Segment, cfg: &QuadratureConfig, out: &mut [f64]) -> Result<()> {
        let verts = &self.geom.vertices;
        let tol = 1e-10 * self.geom.diameter;
        let find = |p: &Point| (0..3).find(|&i| (verts[i] - p).norm() <= tol);
        match (find(&seg.a), find(&seg.b)) {
            (Some(i), Some(j)) if i != j => self.shared_edge(i, j, seg, cfg, out),
            (Some(i), None) | (None, Some(i)) => self.shared_vertex(i, seg, cfg, out)?,
            _ => {
                // cheap lower bound first, exact distance only when needed
                let bound = seg.point_distance(&self.centroid) - self.radius;
                let far = bound >= cfg.near_threshold * self.geom.diameter
                    || segment_triangle_distance(&seg.a, &seg.b, verts) >= cfg.near_threshold * self.geom.diameter;
                if far {
                    let dim = self.dim();
                    for (y, w) in self.far_points.iter().zip(self.far_weights.chunks_exact(dim)) {
                        let g = seg.potential(y);
                        for (o, wi) in out.iter_mut().zip(w) {
                            *o += g * wi;
                        }
                    }
                } else {
                    let root = REF.map(|r| Point::new(r[0], r[1], 0.0));
                    self.subdivided(root, seg, cfg, cfg.max_depth, out)?;
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(DpgError::NonFinitePotential {
                target: [seg.a.x, seg.a.y, seg.a.z],
            });
        }
        Ok(())
    }

    /// Far rule on reference sub-triangles, split while the segment is close.
    fn subdivided(&self, sub: [Point; 3], seg: &Segment, cfg: &QuadratureConfig, depth: usize, out: &mut [f64]) -> Result<()> {
        let phys = sub.map(|r| self.geom.map(r.x, r.y));
        let diam = (phys[0] - phys[1]).norm().max((phys[1] - phys[2]).norm()).max((phys[2] - phys[0]).norm());
        if segment_triangle_distance(&seg.a, &seg.b, &phys) >= cfg.near_threshold * diam {
            let jac = 2.0 * self.geom.area * (sub[1] - sub[0]).cross(&(sub[2] - sub[0])).norm();
            let dim = self.dim();
            let mut vals = [0.0; 15];
            for (p, &w) in self.far_rule.points.iter().zip(&self.far_rule.weights) {
                let r = sub[0] + (sub[1] - sub[0]) * p[0] + (sub[2] - sub[0]) * p[1];
                let g = w * jac * seg.potential(&self.geom.map(r.x, r.y));
                self.basis.eval(r.x, r.y, &mut vals[..dim]);
                for (o, v) in out.iter_mut().zip(&vals[..dim]) {
                    *o += g * v;
                }
            }
            return Ok(());
        }
        if depth == 0 {
            return Err(DpgError::QuadratureNotConverged {
                context: "source subdivision reached the depth cap".into(),
                partial: out.iter().sum(),
            });
        }
        for child in crate::quadrature::split4(&sub) {
            self.subdivided(child, seg, cfg, depth - 1, out)?;
        }
        Ok(())
    }

    /// Polar rule around the reference point `p` over the triangle with
    /// opposite side `q0 -> q1`. The angular variable runs from the ray through
    /// `q0` (fraction 0) to the ray through `q1` (fraction 1), the radial one
    /// from `p` (0) to the side (1).
    #[allow(clippy::too_many_arguments)]
    fn polar_rule(
        &self,
        p: [f64; 2],
        q0: [f64; 2],
        q1: [f64; 2],
        start: AngularStart,
        seg: &Segment,
        cfg: &QuadratureConfig,
        out: &mut [f64],
    ) {
        let pp = self.geom.map(p[0], p[1]);
        let (pq0, pq1) = (self.geom.map(q0[0], q0[1]), self.geom.map(q1[0], q1[1]));
        let side = pq1 - pq0;
        let len = side.norm();
        let s = side / len;
        let along = (pp - pq0).dot(&s);
        let foot = pq0 + s * along;
        let h = (foot - pp).norm();
        let nd = (foot - pp) / h;
        let theta0 = (pq0 - pp).dot(&s).atan2(h);
        let theta1 = (pq1 - pp).dot(&s).atan2(h);
        let span = theta1 - theta0;
        // the ray length h / cos(theta) has poles at +-pi/2
        let angular = angular_rule(&self.singular, start, theta0.cos() / span, theta1.cos() / span, cfg.max_depth);
        // work relative to the apex so that points close to it keep their offset
        let seg = seg.shifted(&pp);
        let dim = self.dim();
        let mut acc = [0.0; 15];
        let mut mono = [0.0; 15];
        for &(phi, wphi) in &angular {
            let theta = theta0 + phi * span;
            let (sn, c) = theta.sin_cos();
            let r_max = h / c;
            let dir = (nd * c + s * sn) * r_max;
            let v = (along + h * sn / c) / len;
            let dref = [q0[0] + v * (q1[0] - q0[0]) - p[0], q0[1] + v * (q1[1] - q0[1]) - p[1]];
            let wtheta = wphi * span * r_max * r_max;
            for &(u, wu) in &self.radial {
                let g = wtheta * wu * u * seg.potential(&(dir * u));
                self.basis.monomials(p[0] + u * dref[0], p[1] + u * dref[1], &mut mono[..dim]);
                for (a, m) in acc.iter_mut().zip(&mono[..dim]) {
                    *a += g * m;
                }
            }
        }
        self.basis.add_from_monomials(&acc[..dim], out);
    }

    fn shared_edge(&self, i: usize, j: usize, seg: &Segment, cfg: &QuadratureConfig, out: &mut [f64]) {
        // split at the edge midpoint; in each half the singular edge is v = 0
        let k = 3 - i - j;
        let m = [0.5 * (REF[i][0] + REF[j][0]), 0.5 * (REF[i][1] + REF[j][1])];
        for apex in [i, j] {
            self.polar_rule(REF[apex], m, REF[k], AngularStart::Logarithmic, seg, cfg, out);
        }
    }

    fn shared_vertex(&self, i: usize, seg: &Segment, cfg: &QuadratureConfig, out: &mut [f64]) -> Result<()> {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        let p = self.geom.vertices[i];
        let other = if (seg.a - p).norm() > (seg.b - p).norm() { seg.a } else { seg.b };
        let t = (other - p).normalize();
        let dj = (self.geom.vertices[j] - p).normalize();
        let dk = (self.geom.vertices[k] - p).normalize();
        let opening = dj.dot(&dk).clamp(-1.0, 1.0).acos();
        let to_j = t.dot(&dj).clamp(-1.0, 1.0).acos() / opening;
        let to_k = t.dot(&dk).clamp(-1.0, 1.0).acos() / opening;
        // angular rule, oriented from the side closest to the segment
        let (first, second, scale) = if to_j <= to_k { (j, k, to_j) } else { (k, j, to_k) };
        let corner = [REF[i], REF[first], REF[second]].map(|r| Point::new(r[0], r[1], 0.0));
        self.vertex_corner(corner, seg, AngularStart::Near(scale), cfg, cfg.max_depth, out)
    }

    /// Polar rule on the reference sub-triangle `sub` with apex `sub[0]` on
    /// the segment, once the segment is separated from the opposite side;
    /// otherwise the corner is split and the remaining children subdivided.
    fn vertex_corner(
        &self,
        sub: [Point; 3],
        seg: &Segment,
        start: AngularStart,
        cfg: &QuadratureConfig,
        depth: usize,
        out: &mut [f64],
    ) -> Result<()> {
        let phys = sub.map(|r| self.geom.map(r.x, r.y));
        let diam = (phys[0] - phys[1]).norm().max((phys[1] - phys[2]).norm()).max((phys[2] - phys[0]).norm());
        let tip = if (seg.a - phys[0]).norm() > (seg.b - phys[0]).norm() { seg.a } else { seg.b };
        let sep = (tip - closest_point(&tip, &phys[0], &phys[1], &phys[2]).0).norm();
        if sep >= POLAR_SEPARATION * diam || depth == 0 {
            let r = sub.map(|r| [r.x, r.y]);
            self.polar_rule(r[0], r[1], r[2], start, seg, cfg, out);
            return Ok(());
        }
        let m01 = (sub[0] + sub[1]) * 0.5;
        let m12 = (sub[1] + sub[2]) * 0.5;
        let m20 = (sub[2] + sub[0]) * 0.5;
        self.vertex_corner([sub[0], m01, m20], seg, start, cfg, depth - 1, out)?;
        for child in [[m01, sub[1], m12], [m20, m12, sub[2]], [m12, m20, m01]] {
            self.subdivided(child, seg, cfg, cfg.max_depth, out)?;
        }
        Ok(())
    }
}

/// Separation, in sub-triangle diameters, between the far end of a touching
/// segment and a polar corner.
const POLAR_SEPARATION: f64 = 1.0;

/// Extra Gauss points of the polar rules over the point-target Duffy order;
/// the line potential has a log singularity along the shared edge.
const SINGULAR_EXTRA_ORDER: usize = 4;

const REF: [[f64; 2]; 3] = [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]];

/// Behaviour of a polar-rule integrand at the first ray.
#[derive(Debug, Clone, Copy)]
enum AngularStart {
    /// Logarithmic singularity on the ray itself.
    Logarithmic,
    /// Near-singularity at the given fraction of the angular range before it.
    Near(f64),
}

/// Rule on `[0, 1]` for the angular fraction of a polar rule, graded toward
/// either end when a near-singularity sits within `scale0`/`scale1`.
fn angular_rule(g: &GaussRule, start: AngularStart, scale0: f64, scale1: f64, depth: usize) -> Vec<(f64, f64)> {
    let mut breaks = vec![0.0, 1.0];
    let lower = match start {
        AngularStart::Logarithmic => {
            breaks.push(0.5);
            0.5
        }
        AngularStart::Near(scale) => {
            let scale = scale.min(scale0);
            if scale < 1.0 {
                breaks.extend(graded_breaks(0.0, scale, depth));
            }
            0.0
        }
    };
    if scale1 < 1.0 {
        breaks.extend(graded_breaks(1.0, scale1, depth).into_iter().filter(|&b| b > lower));
    }
    breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
    breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-15);
    let mut rule = Vec::new();
    for (n, w) in breaks.windows(2).enumerate() {
        if n == 0 && matches!(start, AngularStart::Logarithmic) {
            rule.extend(power_rule(g, 6, 1.0).into_iter().map(|(x, wx)| (w[0] + x * (w[1] - w[0]), wx * (w[1] - w[0]))));
        } else {
            rule.extend(g.points.iter().zip(&g.weights).map(|(&x, &wx)| (w[0] + x * (w[1] - w[0]), wx * (w[1] - w[0]))));
        }
    }
    rule
}

/// Gauss rule on `[0, end]` after the substitution `v = end s^power`, which
/// integrates `f(v) + g(v) log v` accurately for smooth `f`, `g`; plain Gauss
/// on the remainder of `[0, 1]`.
fn power_rule(g: &GaussRule, power: i32, end: f64) -> Vec<(f64, f64)> {
    let q = power as f64;
    let near = g
        .points
        .iter()
        .zip(&g.weights)
        .map(|(&s, &w)| (end * s.powi(power), end * w * q * s.powi(power - 1)));
    let rest = 1.0 - end;
    let far = g.points.iter().zip(&g.weights).map(|(&s, &w)| (end + rest * s, rest * w));
    near.chain(far).filter(|&(_, w)| w > 0.0).collect()
}

/// A polynomial density on one source triangle and a target point.
#[derive(Debug, Clone)]
pub struct SingleLayerQuery {
    pub source: ElementGeometry,
    pub degree: usize,
    /// Lagrange coefficients of the density.
    pub coefficients: Vec<f64>,
    pub target: Point,
}

/// `int_S p(y) / (4 pi |x - y|) dy` for the query density `p`.
pub fn duffy_moment(q: &SingleLayerQuery, cfg: &QuadratureConfig) -> Result<f64> {
    let basis = PolyBasis::new(q.degree)?;
    if q.coefficients.len() != basis.dim() {
        return Err(DpgError::DimensionMismatch {
            expected: basis.dim(),
            got: q.coefficients.len(),
        });
    }
    let cache = SourceCache::new(&q.source, &basis, cfg);
    let mut m = vec![0.0; basis.dim()];
    cache.moments(&q.target, cfg, &mut m)?;
    Ok(m.iter().zip(&q.coefficients).map(|(a, b)| a * b).sum())
}

/// A target edge: endpoints, global unit tangent and the orientation sign of
/// the edge relative to the boundary traversal of the target triangle.
#[derive(Debug, Clone, Copy)]
pub struct EdgeTarget {
    pub a: Point,
    pub b: Point,
    pub tangent: Point,
    pub sign: f64,
}

/// `sign * int_e t . (V rho)(x) ds_x` for a tangential density
/// `rho = sum_m (c1_m t1 + c2_m t2) psi_m` on the source triangle.
pub fn edge_potential_entry(
    target: &EdgeTarget,
    source: &ElementGeometry,
    degree: usize,
    density: &[Vec<f64>; 2],
    cfg: &QuadratureConfig,
) -> Result<f64> {
    let basis = PolyBasis::new(degree)?;
    for c in density {
        if c.len() != basis.dim() {
            return Err(DpgError::DimensionMismatch {
                expected: basis.dim(),
                got: c.len(),
            });
        }
    }
    let cache = SourceCache::new(source, &basis, cfg);
    let mut m = vec![0.0; basis.dim()];
    cache.edge_moments(&target.a, &target.b, cfg, &mut m)?;
    let c1 = target.tangent.dot(&source.frame[0]);
    let c2 = target.tangent.dot(&source.frame[1]);
    let v: f64 = m
        .iter()
        .enumerate()
        .map(|(i, mi)| mi * (c1 * density[0][i] + c2 * density[1][i]))
        .sum();
    Ok(target.sign * v)
}

/// Piecewise polynomial tangential density over a set of triangles, given by
/// Lagrange coefficients of its two frame components per triangle.
#[derive(Debug, Clone)]
pub struct PiecewiseDensity {
    pub degree: usize,
    pub coefficients: Vec<[Vec<f64>; 2]>,
}

impl PiecewiseDensity {
    pub fn zeros(degree: usize, n_triangles: usize) -> Result<Self> {
        let dim = PolyBasis::new(degree)?.dim();
        Ok(Self {
            degree,
            coefficients: vec![[vec![0.0; dim], vec![0.0; dim]]; n_triangles],
        })
    }

    /// Piecewise-constant density from frame components per triangle.
    pub fn constant(values: &[[f64; 2]]) -> Self {
        Self {
            degree: 0,
            coefficients: values.iter().map(|v| [vec![v[0]], vec![v[1]]]).collect(),
        }
    }

    pub fn scaled_add(&self, alpha: f64, other: &Self, beta: f64) -> Self {
        let coefficients = self
            .coefficients
            .iter()
            .zip(&other.coefficients)
            .map(|(a, b)| {
                [0, 1].map(|k| a[k].iter().zip(&b[k]).map(|(x, y)| alpha * x + beta * y).collect())
            })
            .collect();
        Self {
            degree: self.degree,
            coefficients,
        }
    }
}

/// Single-layer potential `sum_T int_T rho(y) / (4 pi |x - y|) dy` of a
/// tangential density, as a Cartesian vector.
pub fn eval_single_layer_field(
    sources: &[ElementGeometry],
    density: &PiecewiseDensity,
    x: &Point,
    cfg: &QuadratureConfig,
) -> Result<Point> {
    if density.coefficients.len() != sources.len() {
        return Err(DpgError::DimensionMismatch {
            expected: sources.len(),
            got: density.coefficients.len(),
        });
    }
    let mut field = Point::zeros();
    if density.degree == 0 {
        for (g, c) in sources.iter().zip(&density.coefficients) {
            if c[0][0] == 0.0 && c[1][0] == 0.0 {
                continue;
            }
            let v = analytic_deg0(&g.vertices, x)?;
            field += (g.frame[0] * c[0][0] + g.frame[1] * c[1][0]) * v;
        }
        return Ok(field);
    }
    let basis = PolyBasis::new(density.degree)?;
    let mut m = vec![0.0; basis.dim()];
    for (g, c) in sources.iter().zip(&density.coefficients) {
        let cache = SourceCache::new(g, &basis, cfg);
        m.iter_mut().for_each(|v| *v = 0.0);
        cache.moments(x, cfg, &mut m)?;
        let a: f64 = m.iter().zip(&c[0]).map(|(p, q)| p * q).sum();
        let b: f64 = m.iter().zip(&c[1]).map(|(p, q)| p * q).sum();
        field += g.frame[0] * a + g.frame[1] * b;
    }
    Ok(field)
}

/// Scalar single-layer potential of a piecewise-constant density.
pub fn eval_single_layer_p0(sources: &[ElementGeometry], values: &[f64], x: &Point) -> Result<f64> {
    let mut v = 0.0;
    for (g, c) in sources.iter().zip(values) {
        if *c != 0.0 {
            v += c * analytic_deg0(&g.vertices, x)?;
        }
    }
    Ok(v)
}

/// `int_T int_S 1 / (4 pi |x - y|) dy dx`: the inner integral in closed form,
/// the outer one by adaptive subdivision of `target`.
pub fn galerkin_p0_entry(target: &ElementGeometry, source: &ElementGeometry, rel_tol: f64, max_depth: usize) -> Result<f64> {
    let scale = target.area * source.area / (FOUR_PI * target.diameter.max(source.diameter));
    let f = |x: &Point| analytic_deg0(&source.vertices, x).unwrap_or(f64::NAN);
    let (v, ok) = adaptive_triangle(target.vertices, &f, rel_tol * scale, max_depth);
    if !v.is_finite() {
        return Err(DpgError::NonFinitePotential { target: [f64::NAN; 3] });
    }
    if !ok {
        return Err(DpgError::QuadratureNotConverged {
            context: "adaptive Galerkin outer rule".into(),
            partial: v,
        });
    }
    Ok(v)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tri(a: [f64; 3], b: [f64; 3], c: [f64; 3]) -> ElementGeometry {
        ElementGeometry::from_vertices([Point::from(a), Point::from(b), Point::from(c)]).unwrap()
    }

    #[test]
    fn closest_point_regions() {
        let (a, b, c) = (Point::zeros(), Point::x(), Point::y());
        let (q, _) = closest_point(&Point::new(0.2, 0.2, 3.0), &a, &b, &c);
        assert!((q - Point::new(0.2, 0.2, 0.0)).norm() < 1e-15);
        let (q, bary) = closest_point(&Point::new(-1.0, -1.0, 0.0), &a, &b, &c);
        assert_eq!(q, a);
        assert_eq!(bary, [1.0, 0.0, 0.0]);
        let (q, _) = closest_point(&Point::new(1.0, 1.0, 0.0), &a, &b, &c);
        assert!((q - Point::new(0.5, 0.5, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn graded_breaks_cover_unit_interval() {
        let b = graded_breaks(0.0, 1e-3, 12);
        assert_eq!(b[0], 0.0);
        assert_eq!(*b.last().unwrap(), 1.0);
        assert!(b[1] < 4e-3);
        let b = graded_breaks(0.4, 1e-2, 12);
        assert!(b.contains(&0.4));
        assert!(b.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn analytic_is_positive_and_matches_monopole() {
        let t = tri([0.0, 0.0, 0.0], [1.0, 0.2, 0.0], [0.3, 0.9, 0.1]);
        let centroid = (t.vertices[0] + t.vertices[1] + t.vertices[2]) / 3.0;
        let r = 100.0 * t.diameter;
        let dir = Point::new(0.3, -0.5, 0.8).normalize();
        let v = analytic_deg0(&t.vertices, &(centroid + dir * r)).unwrap();
        let mono = t.area / (FOUR_PI * r);
        assert!(((v - mono) / mono).abs() < 0.01);
        for x in [centroid, t.vertices[0], (t.vertices[0] + t.vertices[1]) * 0.5, Point::new(5.0, -3.0, 0.0)] {
            assert!(analytic_deg0(&t.vertices, &x).unwrap() > 0.0);
        }
    }

    #[test]
    fn analytic_on_right_triangle_vertex() {
        // int over unit right triangle of 1/|y| = sqrt 2 ln(1 + sqrt 2)
        let t = [Point::zeros(), Point::x(), Point::y()];
        let v = analytic_deg0(&t, &Point::zeros()).unwrap();
        assert!((v * FOUR_PI - 2f64.sqrt() * (1.0 + 2f64.sqrt()).ln()).abs() < 1e-14);
    }

    #[test]
    fn duffy_matches_analytic_at_centroid() {
        let t = tri([0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.5, 1.5, 0.0]);
        let centroid = (t.vertices[0] + t.vertices[1] + t.vertices[2]) / 3.0;
        let q = SingleLayerQuery {
            source: t.clone(),
            degree: 0,
            coefficients: vec![1.0],
            target: centroid,
        };
        let d = duffy_moment(&q, &QuadratureConfig::default()).unwrap();
        let a = analytic_deg0(&t.vertices, &centroid).unwrap();
        assert!(((d - a) / a).abs() < 1e-8, "{d} {a}");
        let zero = SingleLayerQuery {
            coefficients: vec![0.0],
            ..q
        };
        assert_eq!(duffy_moment(&zero, &QuadratureConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn symmetric_targets_give_equal_values() {
        // isoceles triangle symmetric about x = 0
        let t = tri([-1.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.5, 0.0]);
        let basis = PolyBasis::new(2).unwrap();
        // p(x, y) = 1 + x^2 + y is mirror symmetric; interpolate it
        let coeffs: Vec<f64> = basis
            .nodes()
            .iter()
            .map(|n| {
                let p = t.map(n[0], n[1]);
                1.0 + p.x * p.x + p.y
            })
            .collect();
        let cfg = QuadratureConfig::default();
        for target in [Point::new(0.3, 0.4, 0.05), Point::new(0.8, 0.1, 0.0), Point::new(2.0, 1.0, 0.7)] {
            let mirror = Point::new(-target.x, target.y, target.z);
            let mk = |x| SingleLayerQuery {
                source: t.clone(),
                degree: 2,
                coefficients: coeffs.clone(),
                target: x,
            };
            let v1 = duffy_moment(&mk(target), &cfg).unwrap();
            let v2 = duffy_moment(&mk(mirror), &cfg).unwrap();
            assert!(((v1 - v2) / v1).abs() < 1e-12, "{v1} {v2}");
        }
    }

    #[test]
    fn field_is_linear_and_vanishes_for_zero_density() {
        let sources = vec![
            tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]),
            tri([1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]),
        ];
        let cfg = QuadratureConfig::default();
        let x = Point::new(0.4, 0.3, 0.2);
        let zero = PiecewiseDensity::zeros(2, 2).unwrap();
        assert_eq!(eval_single_layer_field(&sources, &zero, &x, &cfg).unwrap(), Point::zeros());
        let mut mu = PiecewiseDensity::zeros(2, 2).unwrap();
        let mut nu = PiecewiseDensity::zeros(2, 2).unwrap();
        for t in 0..2 {
            for k in 0..2 {
                for m in 0..6 {
                    mu.coefficients[t][k][m] = ((t * 13 + k * 7 + m) % 5) as f64 - 2.0;
                    nu.coefficients[t][k][m] = ((t * 3 + k * 11 + m * 2) % 7) as f64 - 3.0;
                }
            }
        }
        let (alpha, beta) = (0.7, -1.3);
        let lhs = eval_single_layer_field(&sources, &mu.scaled_add(alpha, &nu, beta), &x, &cfg).unwrap();
        let rhs = eval_single_layer_field(&sources, &mu, &x, &cfg).unwrap() * alpha
            + eval_single_layer_field(&sources, &nu, &x, &cfg).unwrap() * beta;
        assert!((lhs - rhs).norm() <= 1e-12 * rhs.norm().max(1.0));
    }

    #[test]
    fn edge_entry_of_zero_density_is_zero() {
        let s = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let target = EdgeTarget {
            a: Point::new(0.0, 0.0, 0.0),
            b: Point::new(1.0, 0.0, 0.0),
            tangent: Point::x(),
            sign: 1.0,
        };
        let zero = [vec![0.0; 6], vec![0.0; 6]];
        let v = edge_potential_entry(&target, &s, 2, &zero, &QuadratureConfig::default()).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(QuadratureConfig::default().validate().is_ok());
        let bad = QuadratureConfig {
            near_threshold: 0.0,
            ..QuadratureConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn duffy_matches_analytic_near_source() {
        let t = tri([0.0, 0.0, 0.0], [2.0, 0.0, 0.0], [0.5, 1.5, 0.0]);
        let cfg = QuadratureConfig::default();
        let targets = [
            [0.8, 0.5, 0.0],
            [0.8, 0.5, 1e-7],
            [1.0, 1e-6, 0.0],
            [1.0, -1e-4, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 0.0, 0.0],
            [-0.01, -0.01, 0.01],
            [1.0, 1e-8, 1e-5],
            [2.5, 0.3, 0.2],
        ];
        for x in targets {
            let x = Point::from(x);
            let q = SingleLayerQuery {
                source: t.clone(),
                degree: 0,
                coefficients: vec![1.0],
                target: x,
            };
            let a = analytic_deg0(&t.vertices, &x).unwrap();
            let d = duffy_moment(&q, &cfg).unwrap();
            assert!(((d - a) / a).abs() < 1e-10, "{x:?}: {d} vs {a}");
        }
    }

    #[test]
    fn duffy_matches_adaptive_for_polynomial_density() {
        let t = tri([0.0, 0.0, 0.0], [1.0, 0.1, 0.0], [0.2, 0.8, 0.3]);
        let cfg = QuadratureConfig::default();
        let x = (t.vertices[0] + t.vertices[1] + t.vertices[2]) / 3.0 + t.normal * 0.05;
        let p = |y: &Point| 1.0 + 2.0 * y.x - y.y * y.z + y.x * y.x;
        let basis = PolyBasis::new(2).unwrap();
        let coeffs: Vec<f64> = basis.nodes().iter().map(|n| p(&t.map(n[0], n[1]))).collect();
        let q = SingleLayerQuery {
            source: t.clone(),
            degree: 2,
            coefficients: coeffs,
            target: x,
        };
        let d = duffy_moment(&q, &cfg).unwrap();
        let (oracle, ok) =
            adaptive_triangle(t.vertices, &|y: &Point| p(y) / (FOUR_PI * (x - y).norm()), 1e-13, 30);
        assert!(ok);
        assert!(((d - oracle) / oracle).abs() < 1e-10, "{d} vs {oracle}");
    }

    fn edge_oracle(s: &ElementGeometry, a: Point, b: Point) -> f64 {
        // composite Gauss on a dyadic mesh graded toward both endpoints
        let g = GaussRule::new(16);
        let mut breaks = vec![0.0, 0.5, 1.0];
        for k in 1..40 {
            let h = 0.5f64.powi(k + 1);
            breaks.push(h);
            breaks.push(1.0 - h);
        }
        breaks.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let len = (b - a).norm();
        breaks
            .windows(2)
            .map(|w| g.integrate(w[0], w[1], |t| analytic_deg0(&s.vertices, &(a + (b - a) * t)).unwrap()) * len)
            .sum()
    }

    #[test]
    fn edge_moments_match_oracle() {
        let s = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.3, 0.8, 0.0]);
        let basis = PolyBasis::new(0).unwrap();
        let cfg = QuadratureConfig::default();
        let cache = SourceCache::new(&s, &basis, &cfg);
        let cases = [
            // own edge
            (Point::new(0.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0)),
            // neighbour edge sharing a vertex, out of plane
            (Point::new(1.0, 0.0, 0.0), Point::new(1.2, -0.5, 0.4)),
            // in-plane edge sharing a vertex at a small angle
            (Point::new(0.0, 0.0, 0.0), Point::new(1.0, -0.1, 0.0)),
            // close but not touching
            (Point::new(0.2, -0.01, 0.0), Point::new(0.9, -0.02, 0.05)),
            // far
            (Point::new(4.0, 0.0, 1.0), Point::new(5.0, 1.0, 1.0)),
        ];
        for (a, b) in cases {
            let mut m = [0.0];
            cache.edge_moments(&a, &b, &cfg, &mut m).unwrap();
            let o = edge_oracle(&s, a, b);
            assert!(((m[0] - o) / o).abs() < 1e-8, "{a:?}-{b:?}: {} vs {o}", m[0]);
        }
    }

    fn random_triangle(rng: &mut impl rand::Rng) -> ElementGeometry {
        loop {
            let v = [(); 3].map(|_| Point::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
            let Ok(g) = ElementGeometry::from_vertices(v) else { continue };
            let min_angle = (0..3)
                .map(|k| {
                    let a = (v[(k + 1) % 3] - v[k]).normalize();
                    let b = (v[(k + 2) % 3] - v[k]).normalize();
                    a.dot(&b).clamp(-1.0, 1.0).acos()
                })
                .fold(PI, f64::min);
            if min_angle > 15f64.to_radians() && g.area > 0.05 {
                return g;
            }
        }
    }

    fn random_target(rng: &mut impl rand::Rng, t: &ElementGeometry, kind: usize) -> Point {
        let mut bary = [(); 3].map(|_| rng.random_range(0.0..1.0));
        if kind == 1 {
            bary[rng.random_range(0..3)] = 0.0;
        }
        let total: f64 = bary.iter().sum();
        let on = (t.vertices[0] * bary[0] + t.vertices[1] * bary[1] + t.vertices[2] * bary[2]) / total;
        match kind {
            0 | 1 => on,
            2 => on + t.normal * (t.diameter * 10f64.powf(rng.random_range(-4.0..-0.3))),
            _ => Point::new(rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0)),
        }
    }

    #[test]
    fn random_queries_match_analytic() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let cfg = QuadratureConfig::default();
        for k in 0..100 {
            let t = random_triangle(&mut rng);
            let x = random_target(&mut rng, &t, k % 4);
            let q = SingleLayerQuery {
                source: t.clone(),
                degree: 0,
                coefficients: vec![1.0],
                target: x,
            };
            let d = duffy_moment(&q, &cfg).unwrap();
            let a = analytic_deg0(&t.vertices, &x).unwrap();
            assert!(((d - a) / a).abs() < 1e-7, "query {k}: {d} vs {a}");
        }
    }

    #[test]
    fn duffy_order_convergence_is_monotone() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let basis = PolyBasis::new(2).unwrap();
        for k in 0..10 {
            let t = random_triangle(&mut rng);
            let x = random_target(&mut rng, &t, k % 2);
            let coefficients: Vec<f64> = (0..basis.dim()).map(|_| rng.random_range(0.5..1.5)).collect();
            let q = SingleLayerQuery {
                source: t,
                degree: 2,
                coefficients,
                target: x,
            };
            let at = |n| {
                let cfg = QuadratureConfig {
                    duffy_order: n,
                    ..QuadratureConfig::default()
                };
                duffy_moment(&q, &cfg).unwrap()
            };
            let reference = at(32);
            let errors: Vec<f64> = [2, 4, 6, 8, 12, 16].map(|n| ((at(n) - reference) / reference).abs()).to_vec();
            for w in errors.windows(2) {
                assert!(w[1] <= w[0] || w[1] < 1e-14, "query {k}: {errors:?}");
            }
            assert!(errors[5] < 1e-10, "query {k}: {errors:?}");
        }
    }

    #[test]
    fn far_edge_entry_obeys_kernel_bound() {
        let s = tri([0.0, 0.0, 0.0], [1.0, 0.1, 0.0], [0.2, 0.9, 0.2]);
        let cfg = QuadratureConfig::default();
        let density: [Vec<f64>; 2] = [vec![1.0, -0.5, 0.3], vec![0.2, 0.8, -1.0]];
        let max_density = (0..3).map(|i| density[0][i].hypot(density[1][i])).fold(0.0, f64::max);
        let basis = PolyBasis::new(1).unwrap();
        let rule = TriangleRule::with_degree(12);
        let g = GaussRule::new(10);
        for r in [10.0, 40.0] {
            let a = Point::new(r, 0.0, 0.3);
            let b = Point::new(r + 0.5, 0.6, 0.1);
            let tangent = (b - a).normalize();
            let target = EdgeTarget { a, b, tangent, sign: 1.0 };
            let entry = edge_potential_entry(&target, &s, 1, &density, &cfg).unwrap();
            // brute force: tensor Gauss on the edge and the triangle
            let len = (b - a).norm();
            let mut vals = vec![0.0; 3];
            let mut brute = 0.0;
            for (p, &w) in rule.points.iter().zip(&rule.weights) {
                let y = s.map(p[0], p[1]);
                basis.eval(p[0], p[1], &mut vals);
                let rho: Point = (0..3).map(|i| s.frame[0] * density[0][i] * vals[i] + s.frame[1] * density[1][i] * vals[i]).sum();
                brute += w * 2.0 * s.area * len * g.integrate(0.0, 1.0, |t| rho.dot(&tangent) / (FOUR_PI * (a + (b - a) * t - y).norm()));
            }
            assert!(((entry - brute) / brute).abs() < 1e-8, "{entry} vs {brute}");
            let dist = segment_triangle_distance(&a, &b, &s.vertices);
            let bound = len * s.area * max_density / (FOUR_PI * (dist - s.diameter));
            assert!(entry.abs() <= 1.05 * bound, "{entry} vs {bound}");
        }
    }

    #[test]
    fn edge_entries_satisfy_stokes_identity() {
        let s = tri([0.0, 0.0, 0.0], [1.0, 0.1, 0.0], [0.2, 0.9, 0.2]);
        let t = tri([2.0, 0.3, 0.5], [3.0, 0.5, 0.4], [2.4, 1.4, 1.2]);
        let cfg = QuadratureConfig::default();
        let density = [vec![1.0, -0.5, 0.3], vec![0.2, 0.8, -1.0]];
        let mut sum = 0.0;
        for k in 0..3 {
            let (a, b) = (t.vertices[k], t.vertices[(k + 1) % 3]);
            let target = EdgeTarget { a, b, tangent: (b - a).normalize(), sign: 1.0 };
            sum += edge_potential_entry(&target, &s, 1, &density, &cfg).unwrap();
        }
        // int_T n . curl(V rho): curl_x (G rho) = grad_x G x rho
        let basis = PolyBasis::new(1).unwrap();
        let rule = TriangleRule::with_degree(14);
        let mut vals = vec![0.0; 3];
        let sources: Vec<(Point, Point)> = rule
            .points
            .iter()
            .zip(&rule.weights)
            .map(|(p, &w)| {
                basis.eval(p[0], p[1], &mut vals);
                let rho: Point = (0..3).map(|i| s.frame[0] * density[0][i] * vals[i] + s.frame[1] * density[1][i] * vals[i]).sum();
                (s.map(p[0], p[1]), rho * (w * 2.0 * s.area))
            })
            .collect();
        let mut flux = 0.0;
        for (p, &w) in rule.points.iter().zip(&rule.weights) {
            let x = t.map(p[0], p[1]);
            let curl: Point = sources
                .iter()
                .map(|(y, rho)| {
                    let d = x - y;
                    let grad = -d / (FOUR_PI * d.norm().powi(3));
                    grad.cross(rho)
                })
                .sum();
            flux += w * 2.0 * t.area * t.normal.dot(&curl);
        }
        assert!(((sum - flux) / flux).abs() < 1e-6, "{sum} vs {flux}");
    }

    #[test]
    fn galerkin_entries_are_symmetric() {
        let a = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]);
        let b = tri([1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]);
        let c = tri([1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [1.0, 0.0, 1.0]);
        let d = tri([3.0, 0.0, 0.0], [3.5, 1.0, 0.0], [3.0, 0.5, 1.0]);
        for (s, t) in [(&a, &b), (&a, &c), (&b, &c), (&a, &d)] {
            let st = galerkin_p0_entry(s, t, 1e-9, 14).unwrap();
            let ts = galerkin_p0_entry(t, s, 1e-9, 14).unwrap();
            assert!(((st - ts) / st).abs() < 1e-6, "{st} vs {ts}");
        }
    }

    #[test]
    fn line_potential_matches_quadrature() {
        let (a, b) = (Point::new(0.0, 0.0, 0.0), Point::new(1.0, 0.5, 0.0));
        let g = GaussRule::new(30);
        for y in [Point::new(0.3, 0.9, 0.2), Point::new(2.0, 1.0, 0.0), Point::new(-0.5, 0.1, 0.4)] {
            let len = (b - a).norm();
            let q = g.integrate(0.0, 1.0, |t| len / (FOUR_PI * (a + (b - a) * t - y).norm()));
            let v = line_potential(&a, &b, &y);
            assert!(((v - q) / q).abs() < 1e-12, "{v} vs {q}");
        }
    }

    #[test]
    fn segment_triangle_distance_cases() {
        let t = [Point::zeros(), Point::x(), Point::y()];
        let d = segment_triangle_distance(&Point::new(0.2, 0.2, 1.0), &Point::new(0.2, 0.2, 3.0), &t);
        assert!((d - 1.0).abs() < 1e-14);
        let d = segment_triangle_distance(&Point::new(0.2, 0.2, -1.0), &Point::new(0.2, 0.2, 1.0), &t);
        assert!(d.abs() < 1e-14);
        let d = segment_triangle_distance(&Point::new(2.0, 0.0, 0.0), &Point::new(2.0, 1.0, 0.0), &t);
        assert!((d - 1.0).abs() < 1e-14);
    }

    #[test]
    fn segment_moments_agree_with_outer_edge_route() {
        let cfg = QuadratureConfig::default();
        let fine = QuadratureConfig {
            edge_order: 16,
            duffy_order: 20,
            max_depth: 30,
            ..QuadratureConfig::default()
        };
        let s = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.3, 0.8, 0.0]);
        let cases = [
            (Point::new(0.0, 0.0, 0.0), Point::new(1.0, 0.0, 0.0)),
            (Point::new(1.0, 0.0, 0.0), Point::new(0.3, 0.8, 0.0)),
            (Point::new(1.0, 0.0, 0.0), Point::new(1.2, -0.5, 0.4)),
            (Point::new(0.0, 0.0, 0.0), Point::new(1.0, -0.1, 0.0)),
            (Point::new(0.3, 0.8, 0.0), Point::new(0.3, 0.8, 1.0)),
            // collinear with a source edge, outside the source
            (Point::new(0.0, 0.0, 0.0), Point::new(-1.0, 0.0, 0.0)),
            (Point::new(1.0, 0.0, 0.0), Point::new(1.7, -0.8, 0.0)),
            (Point::new(0.2, -0.01, 0.0), Point::new(0.9, -0.02, 0.05)),
            (Point::new(4.0, 0.0, 1.0), Point::new(5.0, 1.0, 1.0)),
        ];
        for degree in [0, 2] {
            let basis = PolyBasis::new(degree).unwrap();
            let coarse = SourceCache::new(&s, &basis, &cfg);
            let oracle = SourceCache::new(&s, &basis, &fine);
            for (a, b) in cases {
                let mut m = vec![0.0; basis.dim()];
                let mut o = vec![0.0; basis.dim()];
                coarse.segment_moments(&Segment::new(a, b), &cfg, &mut m).unwrap();
                oracle.edge_moments(&a, &b, &fine, &mut o).unwrap();
                let scale = o.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
                for (x, y) in m.iter().zip(&o) {
                    assert!((x - y).abs() < 1e-8 * scale, "{a:?}-{b:?} degree {degree}: {m:?} vs {o:?}");
                }
            }
        }
    }

    #[test]
    fn segment_moments_match_reference_values() {
        let cfg = QuadratureConfig::default();
        let basis = PolyBasis::new(0).unwrap();
        let s = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.3, 0.8, 0.0]);
        let cache = SourceCache::new(&s, &basis, &cfg);
        for (b, expected) in [(Point::new(1.0, 0.0, 0.0), 0.10872241853975281), (Point::new(1.0, -0.1, 0.0), 0.08977068180170283)] {
            let mut m = [0.0];
            cache.segment_moments(&Segment::new(Point::zeros(), b), &cfg, &mut m).unwrap();
            assert!((m[0] / expected - 1.0).abs() < 1e-8, "{} vs {expected}", m[0]);
        }
        let s = tri([0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 0.5, 0.0]);
        let cache = SourceCache::new(&s, &basis, &cfg);
        let mut m = [0.0];
        cache.segment_moments(&Segment::new(Point::new(0.5, 0.5, 0.0), Point::x()), &cfg, &mut m).unwrap();
        assert!((m[0] / 0.05986608517818655 - 1.0).abs() < 1e-8, "{}", m[0]);
    }
}
