//! Gauss rules on intervals and triangles.

use std::f64::consts::PI;

/// Gauss–Legendre rule on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "Gauss rule needs at least one point");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
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
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        Self { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Nodes and weights mapped to `[a, b]`.
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = 0.5 * (a + b);
        let r = 0.5 * (b - a);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (c + r * x, r * w))
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.on(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Quadrature on the reference triangle `{(u, v): u, v >= 0, u + v <= 1}`
/// obtained by collapsing a tensor Gauss rule.
#[derive(Debug, Clone)]
pub struct TriangleRule {
    /// Barycentric-free reference coordinates `(u, v)`.
    pub points: Vec<[f64; 2]>,
    /// Weights summing to 1/2.
    pub weights: Vec<f64>,
}

impl TriangleRule {
    pub fn collapsed(n: usize) -> Self {
        let g = GaussLegendre::new(n);
        let mut points = Vec::with_capacity(n * n);
        let mut weights = Vec::with_capacity(n * n);
        for (a, wa) in g.on(0.0, 1.0) {
            for (b, wb) in g.on(0.0, 1.0) {
                points.push([a, b * (1.0 - a)]);
                weights.push(wa * wb * (1.0 - a));
            }
        }
        Self { points, weights }
    }

    /// Three-point edge-midpoint rule, exact for quadratics.
    pub fn midpoint() -> Self {
        Self {
            points: vec![[0.5, 0.0], [0.5, 0.5], [0.0, 0.5]],
            weights: vec![1.0 / 6.0; 3],
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Physical points and weights on the triangle with vertices `v`.
    pub fn on<'a>(&'a self, v: &'a [[f64; 2]; 3]) -> impl Iterator<Item = ([f64; 2], f64)> + 'a {
        let e1 = [v[1][0] - v[0][0], v[1][1] - v[0][1]];
        let e2 = [v[2][0] - v[0][0], v[2][1] - v[0][1]];
        let jac = (e1[0] * e2[1] - e1[1] * e2[0]).abs();
        self.points.iter().zip(&self.weights).map(move |(p, &w)| {
            (
                [
                    v[0][0] + p[0] * e1[0] + p[1] * e2[0],
                    v[0][1] + p[0] * e1[1] + p[1] * e2[1],
                ],
                w * jac,
            )
        })
    }
}

/// Composite Gauss rule on `[0, len]` geometrically graded towards 0.
///
/// Integrands that behave like `t^beta` with `beta > -1` at the origin are
/// integrated to near machine precision for ratios around 1/2.
pub fn graded_towards_zero(len: f64, levels: usize, ratio: f64, rule: &GaussLegendre) -> Vec<(f64, f64)> {
    let mut out = Vec::with_capacity((levels + 1) * rule.len());
    let mut hi = len;
    for _ in 0..levels {
        let lo = hi * ratio;
        out.extend(rule.on(lo, hi));
        hi = lo;
    }
    out.extend(rule.on(0.0, hi));
    out
}
