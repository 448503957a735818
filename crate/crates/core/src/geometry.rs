//! Fitted uniform meshes of the truncation box and their region bookkeeping.
//!
//! The truncation box `(-R, R)^d` is split into a uniform Cartesian grid with
//! spacing `h`. In 2D every cell is cut along its `(+1, +1)` diagonal into two
//! P1 triangles. All region boundaries (the domain `(-a, a)^d`, the gap of
//! width `eps` around it and the outer boundary) fall on grid lines, so each
//! element lies in exactly one region.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::{GaussLegendre, TriangleRule};

/// Axis-aligned box. In 1D only the first coordinate is used.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    pub lo: [f64; 2],
    pub hi: [f64; 2],
}

impl Aabb {
    pub fn cube(dim: usize, half: f64) -> Self {
        let mut b = Aabb {
            lo: [-half, 0.0],
            hi: [half, 0.0],
        };
        if dim == 2 {
            b.lo[1] = -half;
            b.hi[1] = half;
        }
        b
    }

    pub fn contains(&self, dim: usize, p: &[f64; 2], tol: f64) -> bool {
        (0..dim).all(|k| p[k] >= self.lo[k] - tol && p[k] <= self.hi[k] + tol)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainSpec {
    pub dim: usize,
    /// Half-width of the truncation box.
    pub r: f64,
    /// Half-width of the domain `(-a, a)^d`.
    pub omega_half: f64,
    /// Gap between the domain and the observation set.
    pub eps_gap: f64,
    /// Subdomain on which the potential is reconstructed.
    pub omega_prime: Aabb,
    pub h: f64,
}

impl DomainSpec {
    pub fn with_h(&self, h: f64) -> Self {
        Self { h, ..self.clone() }
    }

    pub fn validate(&self) -> Result<GridCounts> {
        if self.dim != 1 && self.dim != 2 {
            return Err(Error::Config(format!("dim must be 1 or 2, got {}", self.dim)));
        }
        for (name, v) in [
            ("h", self.h),
            ("R", self.r),
            ("omega_half", self.omega_half),
            ("eps_gap", self.eps_gap),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if self.omega_half + self.eps_gap >= self.r {
            return Err(Error::Config(format!(
                "omega_half + eps_gap = {} must be smaller than R = {}",
                self.omega_half + self.eps_gap,
                self.r
            )));
        }
        let n_r = grid_ratio("R", self.r, self.h)?;
        let n_a = grid_ratio("omega_half", self.omega_half, self.h)?;
        let n_e = grid_ratio("eps_gap", self.eps_gap, self.h)?;
        let half = self.omega_half;
        for k in 0..self.dim {
            let (lo, hi) = (self.omega_prime.lo[k], self.omega_prime.hi[k]);
            if !(lo < hi) {
                return Err(Error::Config(format!("omega_prime is empty along axis {k}")));
            }
            if lo <= -half || hi >= half {
                return Err(Error::Config(format!(
                    "omega_prime [{lo}, {hi}] along axis {k} is not strictly inside the domain (-{half}, {half})"
                )));
            }
        }
        Ok(GridCounts { n_r, n_a, n_e })
    }
}

/// Region boundaries measured in grid steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridCounts {
    pub n_r: i64,
    pub n_a: i64,
    pub n_e: i64,
}

fn grid_ratio(name: &str, len: f64, h: f64) -> Result<i64> {
    let q = len / h;
    let n = q.round();
    if (q - n).abs() > 1e-8 * q.max(1.0) || n < 1.0 {
        return Err(Error::Config(format!(
            "{name} = {len} is not an integer multiple of h = {h} (ratio {q})"
        )));
    }
    Ok(n as i64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeRegion {
    Interior,
    Boundary,
    Collar,
    Observation,
    /// On the boundary of the truncation box.
    Outer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ElementRegion {
    Interior,
    Collar,
    Observation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Element {
    pub verts: [usize; 3],
    /// Number of vertices: 2 for segments, 3 for triangles.
    pub nv: usize,
    /// Triangle orientation inside its grid cell (0 lower, 1 upper); 0 in 1D.
    pub kind: u8,
    /// Grid cell index.
    pub cell: [i64; 2],
}

impl Element {
    pub fn vertices(&self) -> &[usize] {
        &self.verts[..self.nv]
    }
}

#[derive(Debug, Clone)]
pub struct Mesh {
    pub dim: usize,
    pub h: f64,
    pub r: f64,
    pub omega_half: f64,
    pub eps_gap: f64,
    pub counts: GridCounts,
    pub nodes: Vec<[f64; 2]>,
    pub elements: Vec<Element>,
    pub node_region: Vec<NodeRegion>,
    pub element_region: Vec<ElementRegion>,
    /// Nodes strictly inside the domain, i.e. the basis of the interior space.
    pub interior_dofs: Vec<usize>,
    /// Observation nodes: nodes in the closed observation set, excluding the outer boundary.
    pub obs_nodes: Vec<usize>,
    /// Inverse of `interior_dofs`.
    pub dof_of_node: Vec<Option<usize>>,
    /// Inverse of `obs_nodes`.
    pub obs_of_node: Vec<Option<usize>>,
}

impl Mesh {
    pub fn n_dofs(&self) -> usize {
        self.interior_dofs.len()
    }

    pub fn n_obs(&self) -> usize {
        self.obs_nodes.len()
    }

    /// Nodes per axis.
    pub fn nodes_per_axis(&self) -> usize {
        (2 * self.counts.n_r + 1) as usize
    }

    /// Elements per axis (grid cells per axis).
    pub fn cells_per_axis(&self) -> usize {
        (2 * self.counts.n_r) as usize
    }

    pub fn simplex(&self, e: usize) -> Simplex {
        let el = &self.elements[e];
        let mut verts = [[0.0; 2]; 3];
        for (k, &v) in el.vertices().iter().enumerate() {
            verts[k] = self.nodes[v];
        }
        Simplex { dim: self.dim, verts }
    }

    /// Node index for integer grid coordinates (0-based from the lower-left corner).
    pub fn node_at(&self, ix: i64, iy: i64) -> usize {
        let n = self.nodes_per_axis() as i64;
        if self.dim == 1 {
            ix as usize
        } else {
            (ix * n + iy) as usize
        }
    }

    pub fn elements_in(&self, region: ElementRegion) -> Vec<usize> {
        (0..self.elements.len())
            .filter(|&e| self.element_region[e] == region)
            .collect()
    }

    /// Sup-norm distance of a point from the domain box, in physical units.
    pub fn sup_distance_to_domain(&self, p: &[f64; 2]) -> f64 {
        (0..self.dim)
            .map(|k| (p[k].abs() - self.omega_half).max(0.0))
            .fold(0.0, f64::max)
    }

    /// Euclidean distance of a point from the closed domain box.
    pub fn distance_to_domain(&self, p: &[f64; 2]) -> f64 {
        (0..self.dim)
            .map(|k| {
                let d = (p[k].abs() - self.omega_half).max(0.0);
                d * d
            })
            .sum::<f64>()
            .sqrt()
    }

    /// Volume of the truncation box.
    pub fn box_measure(&self) -> f64 {
        (2.0 * self.r).powi(self.dim as i32)
    }
}

/// Builds the fitted mesh described by `spec`.
pub fn build_mesh(spec: &DomainSpec) -> Result<Mesh> {
    let counts = spec.validate()?;
    let GridCounts { n_r, n_a, n_e } = counts;
    let h = spec.h;
    let dim = spec.dim;
    let nn = 2 * n_r + 1;

    let classify_node = |m: i64| -> NodeRegion {
        if m < n_a {
            NodeRegion::Interior
        } else if m == n_a {
            NodeRegion::Boundary
        } else if m < n_a + n_e {
            NodeRegion::Collar
        } else if m < n_r {
            NodeRegion::Observation
        } else {
            NodeRegion::Outer
        }
    };
    // Cell classification in half-steps: the cell centre is at |c| + 1/2.
    let classify_cell = |m2: i64| -> ElementRegion {
        if m2 < 2 * n_a {
            ElementRegion::Interior
        } else if m2 < 2 * (n_a + n_e) {
            ElementRegion::Collar
        } else {
            ElementRegion::Observation
        }
    };

    let mut nodes = Vec::new();
    let mut node_region = Vec::new();
    let mut elements = Vec::new();
    let mut element_region = Vec::new();

    if dim == 1 {
        for ix in 0..nn {
            nodes.push([(ix - n_r) as f64 * h, 0.0]);
            node_region.push(classify_node((ix - n_r).abs()));
        }
        for cx in 0..(nn - 1) {
            elements.push(Element {
                verts: [cx as usize, cx as usize + 1, usize::MAX],
                nv: 2,
                kind: 0,
                cell: [cx, 0],
            });
            element_region.push(classify_cell((2 * (cx - n_r) + 1).abs()));
        }
    } else {
        for ix in 0..nn {
            for iy in 0..nn {
                nodes.push([(ix - n_r) as f64 * h, (iy - n_r) as f64 * h]);
                let m = (ix - n_r).abs().max((iy - n_r).abs());
                node_region.push(classify_node(m));
            }
        }
        let id = |ix: i64, iy: i64| (ix * nn + iy) as usize;
        for cx in 0..(nn - 1) {
            for cy in 0..(nn - 1) {
                let m2 = (2 * (cx - n_r) + 1).abs().max((2 * (cy - n_r) + 1).abs());
                let region = classify_cell(m2);
                let (a, b, c, d) = (id(cx, cy), id(cx + 1, cy), id(cx + 1, cy + 1), id(cx, cy + 1));
                elements.push(Element {
                    verts: [a, b, c],
                    nv: 3,
                    kind: 0,
                    cell: [cx, cy],
                });
                elements.push(Element {
                    verts: [a, c, d],
                    nv: 3,
                    kind: 1,
                    cell: [cx, cy],
                });
                element_region.push(region);
                element_region.push(region);
            }
        }
    }

    let interior_dofs: Vec<usize> = (0..nodes.len())
        .filter(|&i| node_region[i] == NodeRegion::Interior)
        .collect();
    let obs_nodes: Vec<usize> = (0..nodes.len())
        .filter(|&i| node_region[i] == NodeRegion::Observation)
        .collect();
    let mut dof_of_node = vec![None; nodes.len()];
    for (k, &i) in interior_dofs.iter().enumerate() {
        dof_of_node[i] = Some(k);
    }
    let mut obs_of_node = vec![None; nodes.len()];
    for (k, &i) in obs_nodes.iter().enumerate() {
        obs_of_node[i] = Some(k);
    }

    log::debug!(
        "mesh: dim={dim} h={h} nodes={} elements={} N0={} NW={}",
        nodes.len(),
        elements.len(),
        interior_dofs.len(),
        obs_nodes.len()
    );

    Ok(Mesh {
        dim,
        h,
        r: spec.r,
        omega_half: spec.omega_half,
        eps_gap: spec.eps_gap,
        counts,
        nodes,
        elements,
        node_region,
        element_region,
        interior_dofs,
        obs_nodes,
        dof_of_node,
        obs_of_node,
    })
}

/// Elements contained in the coefficient subdomain `omega_prime`.
///
/// A box that is not aligned with the grid selects the elements lying
/// completely inside it.
pub fn coefficient_elements(mesh: &Mesh, omega_prime: &Aabb) -> Result<Vec<usize>> {
    let a = mesh.omega_half;
    for k in 0..mesh.dim {
        if omega_prime.lo[k] <= -a || omega_prime.hi[k] >= a || omega_prime.lo[k] >= omega_prime.hi[k] {
            return Err(Error::Config(format!(
                "omega_prime [{}, {}] along axis {k} is not contained in the domain (-{a}, {a})",
                omega_prime.lo[k], omega_prime.hi[k]
            )));
        }
    }
    let tol = 1e-9 * mesh.h;
    let list: Vec<usize> = (0..mesh.elements.len())
        .filter(|&e| {
            mesh.element_region[e] == ElementRegion::Interior
                && mesh.elements[e]
                    .vertices()
                    .iter()
                    .all(|&v| omega_prime.contains(mesh.dim, &mesh.nodes[v], tol))
        })
        .collect();
    if list.is_empty() {
        return Err(Error::Config("omega_prime contains no mesh element".into()));
    }
    Ok(list)
}

/// A segment (1D) or triangle (2D) with its P1 shape functions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Simplex {
    pub dim: usize,
    pub verts: [[f64; 2]; 3],
}

impl Simplex {
    pub fn segment(a: f64, b: f64) -> Self {
        Simplex {
            dim: 1,
            verts: [[a, 0.0], [b, 0.0], [0.0; 2]],
        }
    }

    pub fn triangle(verts: [[f64; 2]; 3]) -> Self {
        Simplex { dim: 2, verts }
    }

    pub fn nv(&self) -> usize {
        self.dim + 1
    }

    pub fn measure(&self) -> f64 {
        let v = &self.verts;
        if self.dim == 1 {
            (v[1][0] - v[0][0]).abs()
        } else {
            0.5 * ((v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[1][1] - v[0][1]) * (v[2][0] - v[0][0])).abs()
        }
    }

    pub fn diameter(&self) -> f64 {
        let n = self.nv();
        let mut d: f64 = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                d = d.max(dist(&self.verts[i], &self.verts[j]));
            }
        }
        d
    }

    pub fn centroid(&self) -> [f64; 2] {
        let n = self.nv() as f64;
        let mut c = [0.0; 2];
        for v in &self.verts[..self.nv()] {
            c[0] += v[0] / n;
            c[1] += v[1] / n;
        }
        c
    }

    pub fn translated(&self, t: [f64; 2]) -> Self {
        let mut s = *self;
        for v in s.verts[..self.nv()].iter_mut() {
            v[0] += t[0];
            v[1] += t[1];
        }
        s
    }

    /// Affine form `phi_a(x) = c_a + g_a . x` of each local shape function.
    pub fn shape_affine(&self) -> [(f64, [f64; 2]); 3] {
        let v = &self.verts;
        let mut out = [(0.0, [0.0; 2]); 3];
        if self.dim == 1 {
            let l = v[1][0] - v[0][0];
            out[0] = (v[1][0] / l, [-1.0 / l, 0.0]);
            out[1] = (-v[0][0] / l, [1.0 / l, 0.0]);
        } else {
            let det = (v[1][0] - v[0][0]) * (v[2][1] - v[0][1]) - (v[1][1] - v[0][1]) * (v[2][0] - v[0][0]);
            for a in 0..3 {
                let (b, c) = ((a + 1) % 3, (a + 2) % 3);
                // phi_a vanishes on the edge (b, c) and equals 1 at a.
                let gx = (v[b][1] - v[c][1]) / det;
                let gy = (v[c][0] - v[b][0]) / det;
                let c0 = (v[b][0] * v[c][1] - v[c][0] * v[b][1]) / det;
                out[a] = (c0, [gx, gy]);
            }
        }
        out
    }

    pub fn shape_values(&self, x: &[f64; 2]) -> [f64; 3] {
        let aff = self.shape_affine();
        let mut out = [0.0; 3];
        for a in 0..self.nv() {
            out[a] = aff[a].0 + aff[a].1[0] * x[0] + aff[a].1[1] * x[1];
        }
        out
    }

    /// Quadrature points and weights with roughly `n` points per direction.
    pub fn quadrature(&self, n: usize) -> Vec<([f64; 2], f64)> {
        if self.dim == 1 {
            let g = GaussLegendre::new(n);
            let (a, b) = (self.verts[0][0], self.verts[1][0]);
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            g.on(lo, hi).map(|(x, w)| ([x, 0.0], w)).collect()
        } else {
            let rule = TriangleRule::collapsed(n);
            rule.on(&self.verts).collect()
        }
    }

    /// Splits into 2 (1D) or 4 (2D) congruent children.
    pub fn children(&self) -> Vec<Simplex> {
        let v = &self.verts;
        let mid = |a: &[f64; 2], b: &[f64; 2]| [(a[0] + b[0]) * 0.5, (a[1] + b[1]) * 0.5];
        if self.dim == 1 {
            let m = mid(&v[0], &v[1]);
            vec![Simplex::segment(v[0][0], m[0]), Simplex::segment(m[0], v[1][0])]
        } else {
            let m01 = mid(&v[0], &v[1]);
            let m12 = mid(&v[1], &v[2]);
            let m20 = mid(&v[2], &v[0]);
            vec![
                Simplex::triangle([v[0], m01, m20]),
                Simplex::triangle([m01, v[1], m12]),
                Simplex::triangle([m20, m12, v[2]]),
                Simplex::triangle([m01, m12, m20]),
            ]
        }
    }

    /// Euclidean distance from a point to the simplex.
    pub fn distance_to_point(&self, p: &[f64; 2]) -> f64 {
        if self.dim == 1 {
            let (a, b) = (
                self.verts[0][0].min(self.verts[1][0]),
                self.verts[0][0].max(self.verts[1][0]),
            );
            return if p[0] < a {
                a - p[0]
            } else if p[0] > b {
                p[0] - b
            } else {
                0.0
            };
        }
        let bary = self.shape_values(p);
        if bary.iter().all(|&b| b >= 0.0) {
            return 0.0;
        }
        let v = &self.verts;
        (0..3)
            .map(|i| point_segment_distance(p, &v[i], &v[(i + 1) % 3]))
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn dist(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

fn point_segment_distance(p: &[f64; 2], a: &[f64; 2], b: &[f64; 2]) -> f64 {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [p[0] - a[0], p[1] - a[1]];
    let t = ((ap[0] * ab[0] + ap[1] * ab[1]) / (ab[0] * ab[0] + ab[1] * ab[1])).clamp(0.0, 1.0);
    dist(p, &[a[0] + t * ab[0], a[1] + t * ab[1]])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec1d(h: f64) -> DomainSpec {
        DomainSpec {
            dim: 1,
            r: 3.0,
            omega_half: 1.0,
            eps_gap: 0.05,
            omega_prime: Aabb::cube(1, 0.75),
            h,
        }
    }

    #[test]
    fn one_dimensional_regions() {
        let mesh = build_mesh(&spec1d(0.05)).unwrap();
        assert_eq!(mesh.nodes.len(), 121);
        // Interior dofs: nodes strictly inside (-1, 1).
        assert_eq!(mesh.n_dofs(), 39);
        for &i in &mesh.interior_dofs {
            assert!(mesh.nodes[i][0].abs() < 1.0 - 1e-12);
        }
        // Observation nodes: [-2.95, -1.05] and [1.05, 2.95].
        assert_eq!(mesh.n_obs(), 2 * 39);
        let min_d = mesh
            .obs_nodes
            .iter()
            .map(|&k| mesh.distance_to_domain(&mesh.nodes[k]))
            .fold(f64::INFINITY, f64::min);
        assert!((min_d - 0.05).abs() < 1e-12);
        assert!(mesh.obs_nodes.iter().all(|&k| mesh.nodes[k][0].abs() < 3.0 - 1e-12));
    }

    #[test]
    fn two_dimensional_grid_counts() {
        let spec = DomainSpec {
            dim: 2,
            omega_prime: Aabb::cube(2, 0.75),
            ..spec1d(0.05)
        };
        let mesh = build_mesh(&spec).unwrap();
        assert_eq!(mesh.nodes_per_axis(), 121);
        assert_eq!(mesh.nodes.len(), 121 * 121);
        assert_eq!(mesh.n_dofs(), 39 * 39);
        // W = box minus (-1.05, 1.05)^2 without the outer boundary.
        assert_eq!(mesh.n_obs(), 119 * 119 - 41 * 41);
        assert_eq!(mesh.elements.len(), 2 * 120 * 120);
    }

    #[test]
    fn unfitted_gap_is_rejected() {
        let err = build_mesh(&spec1d(0.5)).unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("eps_gap"), "{msg}"),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn region_partition_covers_box() {
        for dim in [1, 2] {
            let spec = DomainSpec {
                dim,
                omega_prime: Aabb::cube(dim, 0.5),
                ..spec1d(0.25)
            };
            let spec = DomainSpec { eps_gap: 0.25, ..spec };
            let mesh = build_mesh(&spec).unwrap();
            let total: f64 = (0..mesh.elements.len()).map(|e| mesh.simplex(e).measure()).sum();
            assert!((total - mesh.box_measure()).abs() < 1e-10);
            let omega: f64 = mesh
                .elements_in(ElementRegion::Interior)
                .iter()
                .map(|&e| mesh.simplex(e).measure())
                .sum();
            assert!((omega - 2f64.powi(dim as i32)).abs() < 1e-10);
            // Interior dofs only touch interior elements.
            for (e, el) in mesh.elements.iter().enumerate() {
                if el.vertices().iter().any(|&v| mesh.dof_of_node[v].is_some()) {
                    assert_eq!(mesh.element_region[e], ElementRegion::Interior);
                }
            }
        }
    }

    #[test]
    fn refinement_doubles_cells() {
        let a = build_mesh(&spec1d(0.05)).unwrap();
        let b = build_mesh(&spec1d(0.025)).unwrap();
        assert_eq!(2 * a.cells_per_axis(), b.cells_per_axis());
    }

    #[test]
    fn coefficient_element_selection() {
        let spec = DomainSpec {
            eps_gap: 0.25,
            ..spec1d(0.25)
        };
        let mesh = build_mesh(&spec).unwrap();
        assert_eq!(coefficient_elements(&mesh, &Aabb::cube(1, 0.75)).unwrap().len(), 6);
        let single = Aabb {
            lo: [0.0, 0.0],
            hi: [0.25, 0.0],
        };
        assert_eq!(coefficient_elements(&mesh, &single).unwrap().len(), 1);
        assert!(coefficient_elements(&mesh, &Aabb::cube(1, 1.25)).is_err());
    }

    #[test]
    fn triangle_shape_functions_are_nodal() {
        let t = Simplex::triangle([[0.0, 0.0], [0.3, 0.1], [0.1, 0.4]]);
        for a in 0..3 {
            let vals = t.shape_values(&t.verts[a]);
            for b in 0..3 {
                let expect = if a == b { 1.0 } else { 0.0 };
                assert!((vals[b] - expect).abs() < 1e-14);
            }
        }
    }
}
