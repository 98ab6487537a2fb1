//! Gauss rules on the unit interval and on the reference triangle
//! `{(xi, eta) : xi >= 0, eta >= 0, xi + eta <= 1}`.

use nalgebra::Vector3;

/// Gauss-Legendre rule mapped to `[0, 1]`; weights sum to 1.
#[derive(Debug, Clone)]
pub struct GaussRule {
    pub points: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussRule {
    /// `n`-point rule, exact for polynomials of degree `2n - 1`.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss rule needs at least one point");
        let mut points = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let nf = n as f64;
        for i in 0..n.div_ceil(2) {
            // Tricomi initial guess, then Newton on P_n.
            let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() < 1e-16 {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d != 0.0 {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            // map [-1, 1] -> [0, 1]
            points[i] = 0.5 * (1.0 - x);
            points[n - 1 - i] = 0.5 * (1.0 + x);
            weights[i] = 0.5 * w;
            weights[n - 1 - i] = 0.5 * w;
        }
        Self { points, weights }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Integrate `f` over `[a, b]`.
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let len = b - a;
        self.points
            .iter()
            .zip(&self.weights)
            .map(|(&s, &w)| w * f(a + s * len))
            .sum::<f64>()
            * len
    }
}

impl GaussRule {
    /// `n`-point tanh-sinh rule on `[0, 1]`: exponentially clustered at both
    /// ends, so integrands with logarithmic endpoint behaviour converge fast.
    pub fn tanh_sinh(n: usize) -> Self {
        assert!(n >= 2, "tanh-sinh rule needs at least two points");
        const HALF_WIDTH: f64 = 3.0;
        let h = 2.0 * HALF_WIDTH / (n - 1) as f64;
        let half_pi = std::f64::consts::FRAC_PI_2;
        let (points, weights) = (0..n)
            .map(|k| {
                let t = -HALF_WIDTH + k as f64 * h;
                let u = half_pi * t.sinh();
                let c = u.cosh();
                // (1 + tanh u) / 2 without cancellation near 0
                (0.5 * u.exp() / c, 0.5 * h * half_pi * t.cosh() / (c * c))
            })
            .unzip();
        Self { points, weights }
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let d = if n == 0 {
        0.0
    } else {
        n as f64 * (x * p1 - p0) / (x * x - 1.0)
    };
    (p, d)
}

/// Quadrature rule on the reference triangle; weights sum to 1/2.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
    pub degree: usize,
}

impl TriangleRule {
    /// A rule exact for polynomials of total degree `degree`.
    ///
    /// Degrees up to 5 use the centroid or the symmetric 7-point rule, higher
    /// degrees a collapsed (Duffy) tensor Gauss rule.
    pub fn with_degree(degree: usize) -> Self {
        match degree {
            0 | 1 => Self {
                points: vec![[1.0 / 3.0, 1.0 / 3.0]],
                weights: vec![0.5],
                degree: 1,
            },
            2..=5 => Self::seven_point(),
            _ => Self::collapsed((degree + 2).div_ceil(2), degree),
        }
    }

    /// Symmetric 7-point rule of degree 5.
    pub fn seven_point() -> Self {
        let s15 = 15f64.sqrt();
        let a1 = (6.0 - s15) / 21.0;
        let a2 = (6.0 + s15) / 21.0;
        let w0 = 9.0 / 80.0;
        let w1 = (155.0 - s15) / 2400.0;
        let w2 = (155.0 + s15) / 2400.0;
        let b1 = 1.0 - 2.0 * a1;
        let b2 = 1.0 - 2.0 * a2;
        Self {
            points: vec![
                [1.0 / 3.0, 1.0 / 3.0],
                [a1, a1],
                [b1, a1],
                [a1, b1],
                [a2, a2],
                [b2, a2],
                [a2, b2],
            ],
            weights: vec![w0, w1, w1, w1, w2, w2, w2],
            degree: 5,
        }
    }

    /// Conical product rule with `n` Gauss points per direction.
    pub fn collapsed(n: usize, degree: usize) -> Self {
        let g = GaussRule::new(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (&u, &wu) in g.points.iter().zip(&g.weights) {
            for (&v, &wv) in g.points.iter().zip(&g.weights) {
                points.push([u, (1.0 - u) * v]);
                weights.push(wu * wv * (1.0 - u));
            }
        }
        Self {
            points,
            weights,
            degree,
        }
    }

    /// Conical product of tanh-sinh rules, clustered toward all three edges
    /// and vertices, for integrands that are smooth only inside the triangle.
    pub fn tanh_sinh(n: usize) -> Self {
        let g = GaussRule::tanh_sinh(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (&u, &wu) in g.points.iter().zip(&g.weights) {
            for (&v, &wv) in g.points.iter().zip(&g.weights) {
                points.push([u, (1.0 - u) * v]);
                weights.push(wu * wv * (1.0 - u));
            }
        }
        Self {
            points,
            weights,
            degree: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Integrate `f` over the flat triangle `tri` by recursive 4-way subdivision,
/// comparing the parent rule against the sum over its children.
///
/// Returns the estimate and whether the tolerance was met everywhere before
/// `max_depth` was reached.
pub fn adaptive_triangle<F>(tri: [Vector3<f64>; 3], f: &F, tol: f64, max_depth: usize) -> (f64, bool)
where
    F: Fn(&Vector3<f64>) -> f64,
{
    let rule = TriangleRule::with_degree(7);
    let whole = rule_on(&rule, &tri, f);
    adaptive_rec(&rule, tri, f, whole, tol, max_depth)
}

fn rule_on<F: Fn(&Vector3<f64>) -> f64>(rule: &TriangleRule, tri: &[Vector3<f64>; 3], f: &F) -> f64 {
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let jac = e1.cross(&e2).norm();
    rule.points
        .iter()
        .zip(&rule.weights)
        .map(|(p, &w)| w * f(&(tri[0] + e1 * p[0] + e2 * p[1])))
        .sum::<f64>()
        * jac
}

fn adaptive_rec<F: Fn(&Vector3<f64>) -> f64>(
    rule: &TriangleRule,
    tri: [Vector3<f64>; 3],
    f: &F,
    whole: f64,
    tol: f64,
    depth: usize,
) -> (f64, bool) {
    let children = split4(&tri);
    let parts: Vec<f64> = children.iter().map(|c| rule_on(rule, c, f)).collect();
    let sum: f64 = parts.iter().sum();
    if (sum - whole).abs() <= tol {
        return (sum, true);
    }
    if depth == 0 {
        return (sum, false);
    }
    let mut total = 0.0;
    let mut ok = true;
    for (c, p) in children.into_iter().zip(parts) {
        let (v, good) = adaptive_rec(rule, c, f, p, tol / 2.0, depth - 1);
        total += v;
        ok &= good;
    }
    (total, ok)
}

/// Red refinement into four congruent children.
pub(crate) fn split4(tri: &[Vector3<f64>; 3]) -> [[Vector3<f64>; 3]; 4] {
    let m01 = (tri[0] + tri[1]) * 0.5;
    let m12 = (tri[1] + tri[2]) * 0.5;
    let m20 = (tri[2] + tri[0]) * 0.5;
    [
        [tri[0], m01, m20],
        [m01, tri[1], m12],
        [m20, m12, tri[2]],
        [m12, m20, m01],
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    fn monomial_exact(p: i32, q: i32) -> f64 {
        // int_T xi^p eta^q = p! q! / (p + q + 2)!
        let fact = |n: i32| (1..=n).map(|k| k as f64).product::<f64>();
        fact(p) * fact(q) / fact(p + q + 2)
    }

    #[test]
    fn gauss_rule_is_exact_to_degree_2n_minus_1() {
        for n in 1..=12 {
            let g = GaussRule::new(n);
            for k in 0..(2 * n) {
                let v = g.integrate(0.0, 1.0, |x| x.powi(k as i32));
                assert!((v - 1.0 / (k as f64 + 1.0)).abs() < 1e-14, "n={n} k={k}");
            }
        }
    }

    #[test]
    fn triangle_rules_are_exact_to_their_degree() {
        for d in 0..=14 {
            let rule = TriangleRule::with_degree(d);
            assert!((rule.weights.iter().sum::<f64>() - 0.5).abs() < 1e-15);
            for p in 0..=d as i32 {
                for q in 0..=(d as i32 - p) {
                    let v: f64 = rule
                        .points
                        .iter()
                        .zip(&rule.weights)
                        .map(|(x, w)| w * x[0].powi(p) * x[1].powi(q))
                        .sum();
                    assert!((v - monomial_exact(p, q)).abs() < 1e-14, "d={d} p={p} q={q}");
                }
            }
        }
    }

    #[test]
    fn adaptive_rule_handles_vertex_singularity() {
        let tri = [Vector3::zeros(), Vector3::x(), Vector3::y()];
        // int_T 1/|x| over the unit right triangle = sqrt 2 ln(1 + sqrt 2)
        let (v, _) = adaptive_triangle(tri, &|x: &Vector3<f64>| 1.0 / x.norm(), 1e-10, 30);
        assert!((v - 2f64.sqrt() * (1.0 + 2f64.sqrt()).ln()).abs() < 1e-8);
        // bounded integrand with a gradient singularity converges within tolerance
        let (v, ok) = adaptive_triangle(tri, &|x: &Vector3<f64>| x.norm().sqrt(), 1e-10, 30);
        assert!(ok);
        let (w, _) = adaptive_triangle(tri, &|x: &Vector3<f64>| x.norm().sqrt(), 1e-13, 40);
        assert!((v - w).abs() < 1e-9);
    }

    #[test]
    fn tanh_sinh_rules_resolve_logarithmic_ends() {
        let g = GaussRule::tanh_sinh(40);
        assert!((g.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((g.integrate(0.0, 1.0, f64::ln) + 1.0).abs() < 1e-10);
        assert!((g.integrate(0.0, 1.0, |x| x * (1.0 - x).ln()) + 0.75).abs() < 1e-10);
        let t = TriangleRule::tanh_sinh(40);
        let int = |f: &dyn Fn(f64, f64) -> f64| t.points.iter().zip(&t.weights).map(|(p, w)| w * f(p[0], p[1])).sum::<f64>();
        assert!((int(&|_, _| 1.0) - 0.5).abs() < 1e-12);
        // int_T ln(eta) = int_0^1 (1 - eta) ln(eta) = -3/4
        assert!((int(&|_, y| y.ln()) + 0.75).abs() < 1e-9);
        // int_T ln(1 - xi - eta) = -3/4 by symmetry
        assert!((int(&|x, y| (1.0 - x - y).ln()) + 0.75).abs() < 1e-9);
    }
}
