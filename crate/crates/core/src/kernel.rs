//! The fractional kernel `c_{d,s} |x - y|^{-d-2s}` and the integrals of it
//! that finite element assembly needs.
//!
//! Pair integrals (`cross_integral`, `pair_matrix`, `singular_pair`) use the
//! unnormalised kernel `|x - y|^{-d-2s}`; callers multiply by `c_{d,s}`.
//!
//! Element pairs that touch are integrated in relative coordinates
//! `z = x - y`. For fixed `z` the inner integral over `A ∩ (B + z)` is a
//! polynomial in `z` on each cell of a line arrangement, so the integral in
//! polar coordinates `z = r e` is a sum of radial pieces with weight
//! `r^{-1-2s}`. The piece starting at `r = 0` is integrated exactly with a
//! product rule; the remaining pieces are smooth.

use std::f64::consts::PI;

use statrs::function::beta::{beta, beta_reg};
use statrs::function::gamma::gamma;

use crate::error::{Error, Result};
use crate::geometry::{dist, Simplex};
use crate::quadrature::GaussLegendre;

/// Fractional order together with its normalisation constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FracOrder {
    pub s: f64,
    pub d: usize,
    pub c_ds: f64,
}

impl FracOrder {
    pub fn new(s: f64, d: usize) -> Result<Self> {
        if !(s > 0.0 && s < 1.0) {
            return Err(Error::Parameter(format!(
                "fractional order s must lie in (0, 1), got {s}"
            )));
        }
        if d != 1 && d != 2 {
            return Err(Error::Parameter(format!("dimension must be 1 or 2, got {d}")));
        }
        Ok(Self {
            s,
            d,
            c_ds: normalization_constant(s, d),
        })
    }

    /// Exponent `d + 2s` of the kernel.
    pub fn exponent(&self) -> f64 {
        self.d as f64 + 2.0 * self.s
    }

    /// `|z|^{-d-2s}` from the squared distance.
    #[inline]
    pub fn raw_from_sq(&self, r2: f64) -> f64 {
        r2.powf(-0.5 * self.exponent())
    }
}

/// `c_{d,s} = 4^s s Γ(d/2 + s) / (π^{d/2} Γ(1 - s))`.
pub fn normalization_constant(s: f64, d: usize) -> f64 {
    let half_d = d as f64 / 2.0;
    4f64.powf(s) * s * gamma(half_d + s) / (PI.powf(half_d) * gamma(1.0 - s))
}

/// `c_{d,s} |x - y|^{-d-2s}`.
pub fn kernel_eval(fo: &FracOrder, x: &[f64; 2], y: &[f64; 2]) -> Result<f64> {
    let r2 = sq_dist(fo.d, x, y);
    if r2 == 0.0 {
        return Err(Error::Domain("kernel evaluated at coinciding points".into()));
    }
    Ok(fo.c_ds * fo.raw_from_sq(r2))
}

#[inline]
pub(crate) fn sq_dist(d: usize, x: &[f64; 2], y: &[f64; 2]) -> f64 {
    let dx = x[0] - y[0];
    if d == 1 {
        dx * dx
    } else {
        let dy = x[1] - y[1];
        dx * dx + dy * dy
    }
}

/// `∫_{R^d \ (-half, half)^d} |x - y|^{-d-2s} dy` for `x` inside the box.
pub fn tail_weight(fo: &FracOrder, x: &[f64; 2], half: f64) -> Result<f64> {
    let inside = (0..fo.d).all(|k| x[k].abs() < half);
    if !inside {
        return Err(Error::Domain(format!(
            "tail weight needs a point strictly inside (-{half}, {half})^{}, got {:?}",
            fo.d,
            &x[..fo.d]
        )));
    }
    Ok(box_complement_weight(fo.s, fo.d, x, half))
}

/// Unchecked version of [`tail_weight`].
pub(crate) fn box_complement_weight(s: f64, d: usize, x: &[f64; 2], half: f64) -> f64 {
    let two_s = 2.0 * s;
    if d == 1 {
        return ((half - x[0]).powf(-two_s) + (half + x[0]).powf(-two_s)) / two_s;
    }
    // Polar coordinates around x: the ray in direction θ leaves the box at
    // distance ρ(θ), and the radial integral gives ρ(θ)^{-2s} / (2s). Over
    // one side at normal distance d the angular integral reduces to
    // d^{-2s} ∫ cos^{2s} φ dφ.
    let sides = [
        (half - x[0], x[1]),
        (half + x[0], x[1]),
        (half - x[1], x[0]),
        (half + x[1], x[0]),
    ];
    let mut total = 0.0;
    for (normal, tangential) in sides {
        let hi = (half - tangential).atan2(normal);
        let lo = (-half - tangential).atan2(normal);
        total += normal.powf(-two_s) * (cos_power_integral(s, hi) - cos_power_integral(s, lo));
    }
    total / two_s
}

/// `∫_0^φ cos^{2s} t dt` for `|φ| < π/2`.
fn cos_power_integral(s: f64, phi: f64) -> f64 {
    let x = phi.sin().powi(2).min(1.0);
    let val = 0.5 * beta(0.5, s + 0.5) * beta_reg(0.5, s + 0.5, x);
    val.copysign(phi)
}

/// `∬_{A×B} φ_A(x) φ_B(y) |x - y|^{-d-2s} dx dy` for separated elements.
pub fn cross_integral(fo: &FracOrder, a: &Simplex, shape_a: usize, b: &Simplex, shape_b: usize) -> Result<f64> {
    if shape_a >= a.nv() || shape_b >= b.nv() {
        return Err(Error::Parameter("local basis index out of range".into()));
    }
    let sep = simplex_distance(a, b);
    if sep <= 1e-12 * a.diameter().max(b.diameter()) {
        return Err(Error::Contract(
            "cross_integral called on touching elements; use singular_pair".into(),
        ));
    }
    let aff_a = a.shape_affine();
    let aff_b = b.shape_affine();
    let mut out = [0.0];
    separated_integral(fo, a, b, 8, &mut out, &mut |x, y, k, acc| {
        acc[0] += k * eval_affine(&aff_a[shape_a], x) * eval_affine(&aff_b[shape_b], y);
    });
    Ok(out[0])
}

#[inline]
pub(crate) fn eval_affine(aff: &(f64, [f64; 2]), x: &[f64; 2]) -> f64 {
    aff.0 + aff.1[0] * x[0] + aff.1[1] * x[1]
}

/// Distance between two simplices (zero if they touch or overlap).
pub fn simplex_distance(a: &Simplex, b: &Simplex) -> f64 {
    if a.dim == 1 {
        let (a0, a1) = minmax(a.verts[0][0], a.verts[1][0]);
        let (b0, b1) = minmax(b.verts[0][0], b.verts[1][0]);
        return (b0 - a1).max(a0 - b1).max(0.0);
    }
    let da = b
        .verts
        .iter()
        .map(|p| a.distance_to_point(p))
        .fold(f64::INFINITY, f64::min);
    let db = a
        .verts
        .iter()
        .map(|p| b.distance_to_point(p))
        .fold(f64::INFINITY, f64::min);
    da.min(db)
}

fn minmax(a: f64, b: f64) -> (f64, f64) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Tensor Gauss integration of a separated pair with recursive subdivision
/// until each sub-pair is well separated. `f` receives `(x, y, weight * kernel, acc)`.
pub(crate) fn separated_integral<F>(fo: &FracOrder, a: &Simplex, b: &Simplex, n: usize, acc: &mut [f64], f: &mut F)
where
    F: FnMut(&[f64; 2], &[f64; 2], f64, &mut [f64]),
{
    let sep = simplex_distance(a, b);
    let diam = a.diameter().max(b.diameter());
    if sep < 1.5 * diam {
        // Split the larger element (both when comparable).
        let (da, db) = (a.diameter(), b.diameter());
        if da >= 0.7 * db && db >= 0.7 * da {
            for ca in a.children() {
                for cb in b.children() {
                    separated_integral(fo, &ca, &cb, n, acc, f);
                }
            }
        } else if da > db {
            for ca in a.children() {
                separated_integral(fo, &ca, b, n, acc, f);
            }
        } else {
            for cb in b.children() {
                separated_integral(fo, a, &cb, n, acc, f);
            }
        }
        return;
    }
    let qa = a.quadrature(n);
    let qb = b.quadrature(n);
    for (x, wx) in &qa {
        for (y, wy) in &qb {
            let k = fo.raw_from_sq(sq_dist(fo.d, x, y));
            f(x, y, wx * wy * k, acc);
        }
    }
}

/// Local matrix of the double-integral energy form on an element pair.
///
/// `nodes` is the union of the vertices of `A` and `B` (vertices of `A` first,
/// then the vertices of `B` not shared with `A`); `slots_a[i]` / `slots_b[j]`
/// map local vertices to positions in `nodes`. Entry `(p, q)` is
/// `∬_{A×B} (φ_p(x) - φ_p(y)) (φ_q(x) - φ_q(y)) |x - y|^{-d-2s} dx dy`,
/// where `φ_p` is the continuous hat function of union node `p`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairMatrix {
    pub nodes: Vec<[f64; 2]>,
    pub slots_a: [usize; 3],
    pub slots_b: [usize; 3],
    pub values: [[f64; 6]; 6],
}

impl PairMatrix {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.values[p][q]
    }
}

struct PairGeometry {
    a: Simplex,
    b: Simplex,
    aff_a: [(f64, [f64; 2]); 3],
    aff_b: [(f64, [f64; 2]); 3],
    slots_a: [usize; 3],
    slots_b: [usize; 3],
    n: usize,
    nodes: Vec<[f64; 2]>,
}

impl PairGeometry {
    fn new(a: &Simplex, b: &Simplex) -> Self {
        let scale = a.diameter().max(b.diameter());
        let mut nodes: Vec<[f64; 2]> = a.verts[..a.nv()].to_vec();
        let mut slots_a = [0; 3];
        for (i, s) in slots_a.iter_mut().enumerate().take(a.nv()) {
            *s = i;
        }
        let mut slots_b = [0; 3];
        for j in 0..b.nv() {
            let p = b.verts[j];
            match nodes.iter().position(|q| dist(q, &p) <= 1e-10 * scale) {
                Some(k) => slots_b[j] = k,
                None => {
                    nodes.push(p);
                    slots_b[j] = nodes.len() - 1;
                }
            }
        }
        Self {
            a: *a,
            b: *b,
            aff_a: a.shape_affine(),
            aff_b: b.shape_affine(),
            slots_a,
            slots_b,
            n: nodes.len(),
            nodes,
        }
    }

    /// Difference vector `D_p(x, y) = φ_p|_A(x) - φ_p|_B(y)` over union nodes.
    #[inline]
    fn diff(&self, x: &[f64; 2], y: &[f64; 2]) -> [f64; 6] {
        let mut d = [0.0; 6];
        for i in 0..self.a.nv() {
            d[self.slots_a[i]] += eval_affine(&self.aff_a[i], x);
        }
        for j in 0..self.b.nv() {
            d[self.slots_b[j]] -= eval_affine(&self.aff_b[j], y);
        }
        d
    }

    #[inline]
    fn accumulate(&self, x: &[f64; 2], y: &[f64; 2], w: f64, acc: &mut [[f64; 6]; 6]) {
        let d = self.diff(x, y);
        for p in 0..self.n {
            let wp = w * d[p];
            for q in p..self.n {
                acc[p][q] += wp * d[q];
            }
        }
    }

    /// `G(z) = ∫_{A ∩ (B + z)} D(x, x - z) D(x, x - z)^T dx` (upper triangle).
    fn inner(&self, z: &[f64; 2], acc: &mut [[f64; 6]; 6], scale: f64) {
        if self.a.dim == 1 {
            let (a0, a1) = minmax(self.a.verts[0][0], self.a.verts[1][0]);
            let (b0, b1) = minmax(self.b.verts[0][0], self.b.verts[1][0]);
            let lo = a0.max(b0 + z[0]);
            let hi = a1.min(b1 + z[0]);
            if hi <= lo {
                return;
            }
            // Two-point Gauss is exact for the quadratic integrand.
            let c = 0.5 * (lo + hi);
            let r = 0.5 * (hi - lo);
            let off = r / 3f64.sqrt();
            for x in [c - off, c + off] {
                self.accumulate(&[x, 0.0], &[x - z[0], 0.0], r * scale, acc);
            }
            return;
        }
        let subject: Vec<[f64; 2]> = self.a.verts.to_vec();
        let clip: Vec<[f64; 2]> = self.b.translated(*z).verts.to_vec();
        let poly = clip_convex(&subject, &clip);
        if poly.len() < 3 {
            return;
        }
        for k in 1..(poly.len() - 1) {
            let t = [poly[0], poly[k], poly[k + 1]];
            let area =
                0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[1][1] - t[0][1]) * (t[2][0] - t[0][0])).abs();
            if area == 0.0 {
                continue;
            }
            // Edge midpoint rule: exact for quadratics.
            let w = area / 3.0 * scale;
            for (i, j) in [(0, 1), (1, 2), (2, 0)] {
                let x = [0.5 * (t[i][0] + t[j][0]), 0.5 * (t[i][1] + t[j][1])];
                self.accumulate(&x, &[x[0] - z[0], x[1] - z[1]], w, acc);
            }
        }
    }
}

/// Sutherland–Hodgman clipping of a convex polygon by a convex polygon.
fn clip_convex(subject: &[[f64; 2]], clip: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let orient = signed_area(clip).signum();
    let mut out: Vec<[f64; 2]> = subject.to_vec();
    let m = clip.len();
    for e in 0..m {
        if out.is_empty() {
            break;
        }
        let p = clip[e];
        let q = clip[(e + 1) % m];
        let side = |x: &[f64; 2]| orient * ((q[0] - p[0]) * (x[1] - p[1]) - (q[1] - p[1]) * (x[0] - p[0]));
        let input = std::mem::take(&mut out);
        let n = input.len();
        for i in 0..n {
            let cur = input[i];
            let prev = input[(i + n - 1) % n];
            let sc = side(&cur);
            let sp = side(&prev);
            if sc >= 0.0 {
                if sp < 0.0 {
                    out.push(intersect(&prev, &cur, sp, sc));
                }
                out.push(cur);
            } else if sp >= 0.0 {
                out.push(intersect(&prev, &cur, sp, sc));
            }
        }
    }
    out
}

fn intersect(a: &[f64; 2], b: &[f64; 2], sa: f64, sb: f64) -> [f64; 2] {
    let t = sa / (sa - sb);
    [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
}

fn signed_area(poly: &[[f64; 2]]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (p, q) = (poly[i], poly[(i + 1) % n]);
            p[0] * q[1] - q[0] * p[1]
        })
        .sum::<f64>()
        * 0.5
}

/// Product rule for `∫_0^1 t^{1-2s} P(t) dt` with `P` a polynomial, given
/// the values `P(t_m)` at the nodes returned alongside.
struct OriginRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl OriginRule {
    fn new(s: f64, n: usize) -> Self {
        let g = GaussLegendre::new(n);
        let nodes: Vec<f64> = g.on(0.0, 1.0).map(|(t, _)| t).collect();
        let mut weights = vec![0.0; n];
        for m in 0..n {
            // Monomial coefficients of the Lagrange polynomial L_m.
            let mut coeffs = vec![1.0];
            let mut denom = 1.0;
            for (k, &tk) in nodes.iter().enumerate() {
                if k == m {
                    continue;
                }
                denom *= nodes[m] - tk;
                let mut next = vec![0.0; coeffs.len() + 1];
                for (j, &c) in coeffs.iter().enumerate() {
                    next[j + 1] += c;
                    next[j] -= tk * c;
                }
                coeffs = next;
            }
            weights[m] = coeffs
                .iter()
                .enumerate()
                .map(|(j, c)| c / (j as f64 + 2.0 - 2.0 * s))
                .sum::<f64>()
                / denom;
        }
        Self { nodes, weights }
    }
}

/// Computes the full local energy matrix of an element pair.
pub fn pair_matrix(fo: &FracOrder, a: &Simplex, b: &Simplex) -> PairMatrix {
    let geo = PairGeometry::new(a, b);
    let sep = simplex_distance(a, b);
    let diam = a.diameter().max(b.diameter());
    let mut acc = [[0.0; 6]; 6];
    if sep >= 1.5 * diam {
        let n = if sep >= 4.0 * diam { 5 } else { 8 };
        tensor_pair(fo, &geo, n, &mut acc);
    } else {
        RelativeQuadrature::new(fo.s).integrate(&geo, &mut acc);
    }
    for p in 0..geo.n {
        for q in 0..p {
            acc[p][q] = acc[q][p];
        }
    }
    PairMatrix {
        nodes: geo.nodes,
        slots_a: geo.slots_a,
        slots_b: geo.slots_b,
        values: acc,
    }
}

/// One entry of [`pair_matrix`] for elements sharing at least a point.
///
/// `p` and `q` index the union node list (vertices of `a`, then the remaining
/// vertices of `b`).
pub fn singular_pair(fo: &FracOrder, a: &Simplex, p: usize, b: &Simplex, q: usize) -> Result<f64> {
    let pm = pair_matrix(fo, a, b);
    if p >= pm.len() || q >= pm.len() {
        return Err(Error::Parameter(format!(
            "union node index out of range ({p}, {q}) for {} nodes",
            pm.len()
        )));
    }
    Ok(pm.get(p, q))
}

fn tensor_pair(fo: &FracOrder, geo: &PairGeometry, n: usize, acc: &mut [[f64; 6]; 6]) {
    let qa = geo.a.quadrature(n);
    let qb = geo.b.quadrature(n);
    for (x, wx) in &qa {
        for (y, wy) in &qb {
            let k = fo.raw_from_sq(sq_dist(fo.d, x, y));
            geo.accumulate(x, y, wx * wy * k, acc);
        }
    }
}

/// Relative-coordinate polar quadrature for touching or nearby pairs.
struct RelativeQuadrature {
    s: f64,
    origin: OriginRule,
    radial: GaussLegendre,
    angular: GaussLegendre,
}

impl RelativeQuadrature {
    fn new(s: f64) -> Self {
        Self {
            s,
            origin: OriginRule::new(s, 5),
            radial: GaussLegendre::new(16),
            angular: GaussLegendre::new(12),
        }
    }

    fn integrate(&self, geo: &PairGeometry, acc: &mut [[f64; 6]; 6]) {
        let na = geo.a.nv();
        let nb = geo.b.nv();
        let mut diffs = Vec::with_capacity(9);
        for i in 0..na {
            for j in 0..nb {
                diffs.push([
                    geo.a.verts[i][0] - geo.b.verts[j][0],
                    geo.a.verts[i][1] - geo.b.verts[j][1],
                ]);
            }
        }
        let scale = geo.a.diameter().max(geo.b.diameter());
        if geo.a.dim == 1 {
            let zmin = diffs.iter().map(|p| p[0]).fold(f64::INFINITY, f64::min);
            let zmax = diffs.iter().map(|p| p[0]).fold(f64::NEG_INFINITY, f64::max);
            for sign in [1.0, -1.0] {
                let (lo, hi) = if sign > 0.0 {
                    (zmin.max(0.0), zmax)
                } else {
                    ((-zmax).max(0.0), -zmin)
                };
                if hi <= lo {
                    continue;
                }
                let mut breaks: Vec<f64> = diffs
                    .iter()
                    .map(|p| sign * p[0])
                    .filter(|&r| r > lo && r < hi)
                    .collect();
                breaks.push(lo);
                breaks.push(hi);
                self.radial_pieces(geo, [sign, 0.0], breaks, 1.0, scale, acc);
            }
            return;
        }

        let hull = convex_hull(&diffs);
        // Lines along which the clipped polygon changes combinatorially.
        let mut dirs: Vec<[f64; 2]> = Vec::new();
        for s in [&geo.a, &geo.b] {
            for i in 0..3 {
                let (p, q) = (s.verts[i], s.verts[(i + 1) % 3]);
                let mut d = [q[0] - p[0], q[1] - p[1]];
                let l = (d[0] * d[0] + d[1] * d[1]).sqrt();
                d = [d[0] / l, d[1] / l];
                if !dirs.iter().any(|e| (e[0] * d[1] - e[1] * d[0]).abs() < 1e-12) {
                    dirs.push(d);
                }
            }
        }
        let mut points: Vec<[f64; 2]> = Vec::new();
        for p in &diffs {
            if !points.iter().any(|q| dist(p, q) < 1e-12 * scale) {
                points.push(*p);
            }
        }
        let lines: Vec<([f64; 2], [f64; 2])> = points.iter().flat_map(|p| dirs.iter().map(move |d| (*p, *d))).collect();

        let mut angles: Vec<f64> = vec![-PI, PI];
        let tiny = 1e-12 * scale;
        let mut push_angle = |q: [f64; 2]| {
            if q[0].hypot(q[1]) > tiny {
                angles.push(q[1].atan2(q[0]));
            }
        };
        for p in &points {
            push_angle(*p);
        }
        for i in 0..lines.len() {
            for j in (i + 1)..lines.len() {
                let (p1, d1) = lines[i];
                let (p2, d2) = lines[j];
                let den = d1[0] * d2[1] - d1[1] * d2[0];
                if den.abs() < 1e-12 {
                    continue;
                }
                let t = ((p2[0] - p1[0]) * d2[1] - (p2[1] - p1[1]) * d2[0]) / den;
                let q = [p1[0] + t * d1[0], p1[1] + t * d1[1]];
                if q[0].hypot(q[1]) <= 3.0 * scale {
                    push_angle(q);
                }
            }
        }
        angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
        angles.dedup_by(|a, b| (*a - *b).abs() < 1e-13);

        for w in angles.windows(2) {
            let (t0, t1) = (w[0], w[1]);
            if t1 - t0 < 1e-13 {
                continue;
            }
            for (theta, wt) in self.angular.on(t0, t1) {
                let e = [theta.cos(), theta.sin()];
                let Some((lo, hi)) = ray_polygon(&hull, &e, tiny) else {
                    continue;
                };
                let mut breaks = vec![lo, hi];
                for (p, d) in &lines {
                    let den = d[0] * e[1] - d[1] * e[0];
                    if den.abs() < 1e-14 {
                        continue;
                    }
                    let r = (d[0] * p[1] - d[1] * p[0]) / den;
                    if r > lo && r < hi {
                        breaks.push(r);
                    }
                }
                self.radial_pieces(geo, e, breaks, wt, scale, acc);
            }
        }
    }

    /// `weight * ∫ r^{-1-2s} G(r e) dr` over the sorted break list.
    fn radial_pieces(
        &self,
        geo: &PairGeometry,
        e: [f64; 2],
        mut breaks: Vec<f64>,
        weight: f64,
        scale: f64,
        acc: &mut [[f64; 6]; 6],
    ) {
        breaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        breaks.dedup_by(|a, b| (*a - *b).abs() < 1e-13 * scale);
        let two_s = 2.0 * self.s;
        for w in breaks.windows(2) {
            let (ra, rb) = (w[0], w[1]);
            if rb - ra <= 1e-14 * scale {
                continue;
            }
            if ra <= 1e-13 * scale {
                // G vanishes to second order at the origin: exact product rule.
                let pre = weight * rb.powf(-two_s);
                for (t, wm) in self.origin.nodes.iter().zip(&self.origin.weights) {
                    let r = rb * t;
                    geo.inner(&[r * e[0], r * e[1]], acc, pre * wm / (t * t));
                }
            } else {
                for (r, wr) in self.radial.on(ra, rb) {
                    geo.inner(&[r * e[0], r * e[1]], acc, weight * wr * r.powf(-1.0 - two_s));
                }
            }
        }
    }
}

fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| a[0].partial_cmp(&b[0]).unwrap().then(a[1].partial_cmp(&b[1]).unwrap()));
    pts.dedup_by(|a, b| dist(a, b) < 1e-14);
    if pts.len() < 3 {
        return pts;
    }
    let cross =
        |o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]| (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
    let mut lower: Vec<[f64; 2]> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 1e-15 {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<[f64; 2]> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 1e-15 {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Parameter interval `[lo, hi]` (with `lo >= 0`) of the ray `r e` inside a
/// counter-clockwise convex polygon.
fn ray_polygon(hull: &[[f64; 2]], e: &[f64; 2], tiny: f64) -> Option<(f64, f64)> {
    let mut lo: f64 = 0.0;
    let mut hi = f64::INFINITY;
    let n = hull.len();
    for i in 0..n {
        let p = hull[i];
        let q = hull[(i + 1) % n];
        // Inward normal of a counter-clockwise edge.
        let nrm = [-(q[1] - p[1]), q[0] - p[0]];
        let ne = nrm[0] * e[0] + nrm[1] * e[1];
        let np = nrm[0] * p[0] + nrm[1] * p[1];
        let len = nrm[0].hypot(nrm[1]);
        // Constraint: r * ne >= np.
        if ne.abs() < 1e-15 * len {
            if np > tiny * len {
                return None;
            }
            continue;
        }
        let r = np / ne;
        if ne > 0.0 {
            lo = lo.max(r);
        } else {
            hi = hi.min(r);
        }
    }
    if hi > lo + tiny {
        Some((lo.max(0.0), hi))
    } else {
        None
    }
}
