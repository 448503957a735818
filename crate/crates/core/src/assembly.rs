//! Discrete operators of the truncated problem.
//!
//! The truncated energy of interior hats splits into three pieces:
//! element pairs inside the domain, the one-sided collar integral over
//! `Ω_R \ Ω` and the tail over `R^d \ Ω_R`. The last two are
//! `c ∫ φ_i φ_j w(x) dx` with `w` a box-complement weight.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use nalgebra_sparse::{CooMatrix, CsrMatrix};

use crate::error::{Error, Result};
use crate::geometry::{ElementRegion, Mesh, NodeRegion, Simplex};
use crate::kernel::{box_complement_weight, pair_matrix, separated_integral, FracOrder, PairMatrix};

pub mod cache;

/// Exterior datum `f`, prescribed on the observation set.
#[derive(Debug, Clone, PartialEq)]
pub enum ExteriorDatum {
    /// Quintic smoothstep in the sup-distance to the domain, rising from 0 at
    /// the inner edge of `W` to 1 over `width`.
    Cutoff { width: f64 },
    /// Arbitrary nodal values on the whole mesh.
    Nodal(Vec<f64>),
}

impl Default for ExteriorDatum {
    fn default() -> Self {
        ExteriorDatum::Cutoff { width: 0.1 }
    }
}

/// `6t^5 - 15t^4 + 10t^3` clamped to `[0, 1]`.
pub fn smoothstep(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

impl ExteriorDatum {
    /// Value of the analytic cutoff at a point.
    pub fn cutoff_value(mesh: &Mesh, width: f64, x: &[f64; 2]) -> f64 {
        // Snap to zero at the inner edge of W so rounding cannot extend the support.
        let t = (mesh.sup_distance_to_domain(x) - mesh.eps_gap) / width;
        smoothstep(if t < 1e-9 { 0.0 } else { t })
    }

    /// Nodal interpolant `u_{h,f}` on all mesh nodes.
    pub fn nodal_values(&self, mesh: &Mesh) -> Result<Vec<f64>> {
        match self {
            ExteriorDatum::Cutoff { width } => {
                if !(*width > 0.0) {
                    return Err(Error::Config(format!("cutoff width must be positive, got {width}")));
                }
                Ok(mesh.nodes.iter().map(|x| Self::cutoff_value(mesh, *width, x)).collect())
            }
            ExteriorDatum::Nodal(v) => {
                if v.len() != mesh.nodes.len() {
                    return Err(Error::Parameter(format!(
                        "nodal exterior datum has {} values for {} nodes",
                        v.len(),
                        mesh.nodes.len()
                    )));
                }
                Ok(v.clone())
            }
        }
    }
}

/// Potential entering the weighted mass matrix.
#[derive(Clone, Copy)]
pub enum Potential<'a> {
    Zero,
    Function(&'a dyn Fn(&[f64; 2]) -> f64),
    /// Element-wise constant values `(element, value)`; other elements are zero.
    Elementwise(&'a [(usize, f64)]),
}

/// The stiffness matrix split by integration region.
#[derive(Debug, Clone)]
pub struct StiffnessParts {
    /// `(c/2) ∬_{Ω×Ω}` over element pairs.
    pub pairs: DMatrix<f64>,
    /// `c ∫ φ_i φ_j ∫_{Ω_R \ Ω} k`.
    pub collar: DMatrix<f64>,
    /// `c ∫ φ_i φ_j ∫_{R^d \ Ω_R} k`.
    pub tail: DMatrix<f64>,
}

impl StiffnessParts {
    /// The truncated double integral over `Ω_R × Ω_R`.
    pub fn truncated(&self) -> DMatrix<f64> {
        &self.pairs + &self.collar
    }

    pub fn total(&self) -> DMatrix<f64> {
        &self.pairs + &self.collar + &self.tail
    }
}

#[derive(Debug, Clone)]
pub struct AssemblyOptions {
    /// Ordered element-pair count above which a cost warning is logged.
    pub pair_budget: usize,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self {
            pair_budget: 20_000_000,
        }
    }
}

/// All operators of one discretisation. Immutable after assembly.
#[derive(Debug, Clone)]
pub struct AssembledOperators {
    pub fo: FracOrder,
    pub mesh: Arc<Mesh>,
    pub a0: DMatrix<f64>,
    /// Tail part of `a0`, kept for diagnostics.
    pub a0_tail: DMatrix<f64>,
    pub m0: CsrMatrix<f64>,
    pub s: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub w_obs: CsrMatrix<f64>,
    pub b_ext: DVector<f64>,
    pub u_hf: Vec<f64>,
}

impl AssembledOperators {
    pub fn assemble(mesh: Arc<Mesh>, fo: FracOrder, datum: &ExteriorDatum, opts: &AssemblyOptions) -> Result<Self> {
        check_order(&mesh, &fo)?;
        let parts = assemble_stiffness_parts(&mesh, &fo, opts)?;
        let a0 = parts.total();
        let m0 = assemble_mass(&mesh, MassRegion::Interior);
        let s = &a0 + dense(&m0);
        let b = assemble_observation(&mesh, &fo);
        let w_obs = assemble_mass(&mesh, MassRegion::Observation);
        let u_hf = datum.nodal_values(&mesh)?;
        let b_ext = assemble_bext(&mesh, &fo, datum)?;
        Ok(Self {
            fo,
            mesh,
            a0,
            a0_tail: parts.tail,
            m0,
            s,
            b,
            w_obs,
            b_ext,
            u_hf,
        })
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_dofs()
    }

    pub fn n_obs(&self) -> usize {
        self.mesh.n_obs()
    }

    /// `‖μ‖_Y = (μ^T W μ)^{1/2}`.
    pub fn norm_y(&self, mu: &DVector<f64>) -> f64 {
        quad_form_sparse(&self.w_obs, mu).max(0.0).sqrt()
    }

    /// `‖v‖_S = (v^T S v)^{1/2}`.
    pub fn norm_s(&self, v: &DVector<f64>) -> f64 {
        v.dot(&(&self.s * v)).max(0.0).sqrt()
    }

    /// `‖v‖_{L²(Ω)}` of an interior FE function.
    pub fn norm_l2(&self, v: &DVector<f64>) -> f64 {
        quad_form_sparse(&self.m0, v).max(0.0).sqrt()
    }
}

fn check_order(mesh: &Mesh, fo: &FracOrder) -> Result<()> {
    if mesh.dim != fo.d {
        return Err(Error::Parameter(format!(
            "fractional order built for d = {} used on a {}D mesh",
            fo.d, mesh.dim
        )));
    }
    Ok(())
}

pub(crate) fn quad_form_sparse(m: &CsrMatrix<f64>, v: &DVector<f64>) -> f64 {
    let mut acc = 0.0;
    for (i, row) in m.row_iter().enumerate() {
        let mut r = 0.0;
        for (&j, &val) in row.col_indices().iter().zip(row.values()) {
            r += val * v[j];
        }
        acc += v[i] * r;
    }
    acc
}

/// Sparse matrix-vector product.
pub fn spmv(m: &CsrMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    let mut out = DVector::zeros(m.nrows());
    for (i, row) in m.row_iter().enumerate() {
        out[i] = row
            .col_indices()
            .iter()
            .zip(row.values())
            .map(|(&j, &val)| val * v[j])
            .sum();
    }
    out
}

pub fn dense(m: &CsrMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), m.ncols());
    for (i, row) in m.row_iter().enumerate() {
        for (&j, &val) in row.col_indices().iter().zip(row.values()) {
            out[(i, j)] += val;
        }
    }
    out
}

type PairKey = (u64, usize, u8, u8, i64, i64);

fn pair_cache() -> &'static Mutex<HashMap<PairKey, Arc<PairMatrix>>> {
    static CACHE: OnceLock<Mutex<HashMap<PairKey, Arc<PairMatrix>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Pair matrix of two lattice elements on the unit grid, memoised.
fn unit_pair(fo: &FracOrder, ka: u8, kb: u8, off: [i64; 2]) -> Arc<PairMatrix> {
    let key = (fo.s.to_bits(), fo.d, ka, kb, off[0], off[1]);
    if let Some(pm) = pair_cache().lock().expect("pair cache poisoned").get(&key) {
        return pm.clone();
    }
    let a = unit_element(fo.d, ka, [0, 0]);
    let b = unit_element(fo.d, kb, off);
    let pm = Arc::new(pair_matrix(fo, &a, &b));
    pair_cache()
        .lock()
        .expect("pair cache poisoned")
        .insert(key, pm.clone());
    pm
}

fn unit_element(d: usize, kind: u8, cell: [i64; 2]) -> Simplex {
    let (x, y) = (cell[0] as f64, cell[1] as f64);
    if d == 1 {
        return Simplex::segment(x, x + 1.0);
    }
    if kind == 0 {
        Simplex::triangle([[x, y], [x + 1.0, y], [x + 1.0, y + 1.0]])
    } else {
        Simplex::triangle([[x, y], [x + 1.0, y + 1.0], [x, y + 1.0]])
    }
}

/// `a(ψ, φ_j)` for every mesh node `j`, where `a` is the full-space energy
/// form and `ψ` a nodal function whose support stays away from `∂Ω_R`.
pub fn energy_action(mesh: &Mesh, fo: &FracOrder, psi: &[f64]) -> Result<Vec<f64>> {
    check_order(mesh, fo)?;
    if psi.len() != mesh.nodes.len() {
        return Err(Error::Parameter(format!(
            "nodal function has {} values for {} nodes",
            psi.len(),
            mesh.nodes.len()
        )));
    }
    let edge = mesh.r - 0.5 * mesh.h;
    let support: Vec<bool> = mesh
        .elements
        .iter()
        .map(|el| el.vertices().iter().any(|&v| psi[v] != 0.0))
        .collect();
    for (e, el) in mesh.elements.iter().enumerate() {
        if support[e]
            && el
                .vertices()
                .iter()
                .any(|&v| (0..mesh.dim).any(|k| mesh.nodes[v][k].abs() > edge))
        {
            return Err(Error::Contract("nodal function touches the truncation boundary".into()));
        }
    }
    let scale = fo.c_ds * 0.5 * mesh.h.powf(fo.d as f64 - 2.0 * fo.s);
    let mut out = vec![0.0; mesh.nodes.len()];
    for (ea, el_a) in mesh.elements.iter().enumerate() {
        for (eb, el_b) in mesh.elements.iter().enumerate() {
            if !(support[ea] || support[eb]) {
                continue;
            }
            let off = [el_b.cell[0] - el_a.cell[0], el_b.cell[1] - el_a.cell[1]];
            let pm = unit_pair(fo, el_a.kind, el_b.kind, off);
            let mut gid = [0usize; 6];
            for i in 0..el_a.nv {
                gid[pm.slots_a[i]] = el_a.verts[i];
            }
            for j in 0..el_b.nv {
                gid[pm.slots_b[j]] = el_b.verts[j];
            }
            for p in 0..pm.len() {
                let acc: f64 = (0..pm.len()).map(|q| pm.get(p, q) * psi[gid[q]]).sum();
                out[gid[p]] += scale * acc;
            }
        }
    }
    for (e, el) in mesh.elements.iter().enumerate() {
        if !support[e] {
            continue;
        }
        let simplex = mesh.simplex(e);
        for (x, w) in simplex.quadrature(6) {
            let phi = simplex.shape_values(&x);
            let px: f64 = (0..el.nv).map(|a| phi[a] * psi[el.verts[a]]).sum();
            let t = box_complement_weight(fo.s, fo.d, &x, mesh.r);
            for b in 0..el.nv {
                out[el.verts[b]] += fo.c_ds * w * t * px * phi[b];
            }
        }
    }
    Ok(out)
}

/// Assembles `A0` as the sum of its three parts.
pub fn assemble_stiffness(mesh: &Mesh, fo: &FracOrder) -> Result<DMatrix<f64>> {
    Ok(assemble_stiffness_parts(mesh, fo, &AssemblyOptions::default())?.total())
}

pub fn assemble_stiffness_parts(mesh: &Mesh, fo: &FracOrder, opts: &AssemblyOptions) -> Result<StiffnessParts> {
    check_order(mesh, fo)?;
    let n0 = mesh.n_dofs();
    let omega = mesh.elements_in(ElementRegion::Interior);
    let pair_count = omega.len() * omega.len();
    if pair_count > opts.pair_budget {
        log::warn!(
            "stiffness assembly visits {pair_count} element pairs (budget {})",
            opts.pair_budget
        );
    }
    let scale = fo.c_ds * 0.5 * mesh.h.powf(fo.d as f64 - 2.0 * fo.s);
    let mut pairs = DMatrix::zeros(n0, n0);
    let mut local = HashMap::new();
    for &ea in &omega {
        let el_a = &mesh.elements[ea];
        for &eb in &omega {
            let el_b = &mesh.elements[eb];
            let off = [el_b.cell[0] - el_a.cell[0], el_b.cell[1] - el_a.cell[1]];
            let pm = local
                .entry((el_a.kind, el_b.kind, off))
                .or_insert_with(|| unit_pair(fo, el_a.kind, el_b.kind, off))
                .clone();
            let mut dofs = [None; 6];
            for i in 0..el_a.nv {
                dofs[pm.slots_a[i]] = mesh.dof_of_node[el_a.verts[i]];
            }
            for j in 0..el_b.nv {
                dofs[pm.slots_b[j]] = mesh.dof_of_node[el_b.verts[j]];
            }
            for p in 0..pm.len() {
                let Some(gp) = dofs[p] else { continue };
                for q in 0..pm.len() {
                    let Some(gq) = dofs[q] else { continue };
                    pairs[(gp, gq)] += scale * pm.get(p, q);
                }
            }
        }
    }

    let mut collar = DMatrix::zeros(n0, n0);
    let mut tail = DMatrix::zeros(n0, n0);
    for &e in &omega {
        let el = &mesh.elements[e];
        let simplex = mesh.simplex(e);
        let dofs: Vec<(usize, usize)> = (0..el.nv)
            .filter_map(|i| mesh.dof_of_node[el.verts[i]].map(|g| (i, g)))
            .collect();
        if dofs.is_empty() {
            continue;
        }
        let (inner, outer) = if mesh.dim == 1 {
            one_sided_1d(&simplex, fo.s, mesh.omega_half, mesh.r)
        } else {
            one_sided_2d(mesh, &simplex, fo.s)
        };
        for &(i, gi) in &dofs {
            for &(j, gj) in &dofs {
                collar[(gi, gj)] += fo.c_ds * (inner[i][j] - outer[i][j]);
                tail[(gi, gj)] += fo.c_ds * outer[i][j];
            }
        }
    }
    Ok(StiffnessParts { pairs, collar, tail })
}

/// Local matrices `∫_K φ_a φ_b w(x) dx` for the box-complement weights of the
/// domain (`inner`) and of the truncation box (`outer`), integrated exactly.
fn one_sided_1d(seg: &Simplex, s: f64, a: f64, r: f64) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let mut inner = [[0.0; 3]; 3];
    let mut outer = [[0.0; 3]; 3];
    let x = [seg.verts[0][0], seg.verts[1][0]];
    for i in 0..2 {
        for j in 0..2 {
            let vi = [(i == 0) as u8 as f64, (i == 1) as u8 as f64];
            let vj = [(j == 0) as u8 as f64, (j == 1) as u8 as f64];
            for sigma in [1.0, -1.0] {
                inner[i][j] += power_moment(x, vi, vj, a, sigma, s) / (2.0 * s);
                outer[i][j] += power_moment(x, vi, vj, r, sigma, s) / (2.0 * s);
            }
        }
    }
    (inner, outer)
}

/// `∫_{x0}^{x1} φ_i φ_j (L - σx)^{-2s} dx` for linear `φ` with nodal values
/// `vi`, `vj`, via monomials in `t = L - σx`.
fn power_moment(x: [f64; 2], vi: [f64; 2], vj: [f64; 2], l: f64, sigma: f64, s: f64) -> f64 {
    let mut t = [l - sigma * x[0], l - sigma * x[1]];
    for tk in t.iter_mut() {
        if tk.abs() <= 1e-12 * l {
            *tk = 0.0;
        }
    }
    let (lo, hi) = if t[0] <= t[1] { (0, 1) } else { (1, 0) };
    let (tlo, thi) = (t[lo], t[hi]);
    let lin = |v: [f64; 2]| {
        let q = (v[hi] - v[lo]) / (thi - tlo);
        (v[lo] - q * tlo, q)
    };
    let (p1, q1) = lin(vi);
    let (p2, q2) = lin(vj);
    let coeffs = [p1 * p2, p1 * q2 + p2 * q1, q1 * q2];
    let mut total = 0.0;
    for (k, &c) in coeffs.iter().enumerate() {
        if c == 0.0 {
            continue;
        }
        let e = k as f64 + 1.0 - 2.0 * s;
        let lower = if tlo == 0.0 {
            if e <= 0.0 {
                return f64::INFINITY;
            }
            0.0
        } else {
            tlo.powf(e)
        };
        total += c * (thi.powf(e) - lower) / e;
    }
    total
}

/// 2D version of [`one_sided_1d`] with quadrature graded towards `∂Ω`.
fn one_sided_2d(mesh: &Mesh, tri: &Simplex, s: f64) -> ([[f64; 3]; 3], [[f64; 3]; 3]) {
    let mut inner = [[0.0; 3]; 3];
    let mut outer = [[0.0; 3]; 3];
    let aff = tri.shape_affine();
    let a = mesh.omega_half;
    let r = mesh.r;
    let mut stack = vec![(*tri, 0usize)];
    while let Some((piece, depth)) = stack.pop() {
        let on_boundary = piece
            .verts
            .iter()
            .filter(|v| v[0].abs().max(v[1].abs()) >= a - 1e-12 * a)
            .count();
        let touches = on_boundary > 0;
        let limit = if on_boundary >= 2 { 8 } else { 5 };
        if touches && depth < limit {
            stack.extend(piece.children().into_iter().map(|c| (c, depth + 1)));
            continue;
        }
        for (x, w) in piece.quadrature(if touches { 4 } else { 5 }) {
            let wi = box_complement_weight(s, 2, &x, a);
            let wo = box_complement_weight(s, 2, &x, r);
            let phi: Vec<f64> = aff.iter().map(|c| crate::kernel::eval_affine(c, &x)).collect();
            for i in 0..3 {
                for j in 0..3 {
                    let pp = w * phi[i] * phi[j];
                    inner[i][j] += pp * wi;
                    outer[i][j] += pp * wo;
                }
            }
        }
    }
    (inner, outer)
}

/// Node sets for mass matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MassRegion {
    /// Interior dofs, integrated over the domain.
    Interior,
    /// Observation nodes, integrated over the observation elements.
    Observation,
}

/// Exact P1 mass matrix on a node set.
pub fn assemble_mass(mesh: &Mesh, region: MassRegion) -> CsrMatrix<f64> {
    let (index, elements, n) = match region {
        MassRegion::Interior => (
            &mesh.dof_of_node,
            mesh.elements_in(ElementRegion::Interior),
            mesh.n_dofs(),
        ),
        MassRegion::Observation => (
            &mesh.obs_of_node,
            mesh.elements_in(ElementRegion::Observation),
            mesh.n_obs(),
        ),
    };
    mass_on(mesh, &elements, |v| index[v], n)
}

/// Mass matrix of the closed observation set, including nodes on the outer
/// boundary. Returns the matrix and its node list.
pub fn observation_mass_closed(mesh: &Mesh) -> (CsrMatrix<f64>, Vec<usize>) {
    let nodes: Vec<usize> = (0..mesh.nodes.len())
        .filter(|&i| matches!(mesh.node_region[i], NodeRegion::Observation | NodeRegion::Outer))
        .collect();
    let mut index = vec![None; mesh.nodes.len()];
    for (k, &i) in nodes.iter().enumerate() {
        index[i] = Some(k);
    }
    // Inner edge nodes of W are tagged as collar nodes; include them too.
    let elements = mesh.elements_in(ElementRegion::Observation);
    let mut all = nodes.clone();
    for &e in &elements {
        for &v in mesh.elements[e].vertices() {
            if index[v].is_none() {
                index[v] = Some(all.len());
                all.push(v);
            }
        }
    }
    let n = all.len();
    (mass_on(mesh, &elements, |v| index[v], n), all)
}

fn mass_on(mesh: &Mesh, elements: &[usize], index: impl Fn(usize) -> Option<usize>, n: usize) -> CsrMatrix<f64> {
    let mut coo = CooMatrix::new(n, n);
    for &e in elements {
        let el = &mesh.elements[e];
        let meas = mesh.simplex(e).measure();
        let (diag, off) = if mesh.dim == 1 {
            (meas / 3.0, meas / 6.0)
        } else {
            (meas / 6.0, meas / 12.0)
        };
        for (a, &va) in el.vertices().iter().enumerate() {
            let Some(ia) = index(va) else { continue };
            for (b, &vb) in el.vertices().iter().enumerate() {
                let Some(ib) = index(vb) else { continue };
                coo.push(ia, ib, if a == b { diag } else { off });
            }
        }
    }
    CsrMatrix::from(&coo)
}

/// `(M_q)_{ij} = ∫_Ω q φ_i φ_j`.
pub fn assemble_weighted_mass(mesh: &Mesh, q: Potential<'_>) -> DMatrix<f64> {
    let n0 = mesh.n_dofs();
    let mut out = DMatrix::zeros(n0, n0);
    let mut add_local = |e: usize, local: &dyn Fn(usize, usize) -> f64| {
        let el = &mesh.elements[e];
        for a in 0..el.nv {
            let Some(ia) = mesh.dof_of_node[el.verts[a]] else {
                continue;
            };
            for b in 0..el.nv {
                let Some(ib) = mesh.dof_of_node[el.verts[b]] else {
                    continue;
                };
                out[(ia, ib)] += local(a, b);
            }
        }
    };
    match q {
        Potential::Zero => {}
        Potential::Elementwise(values) => {
            for &(e, v) in values {
                let meas = mesh.simplex(e).measure();
                let (diag, off) = if mesh.dim == 1 {
                    (meas / 3.0, meas / 6.0)
                } else {
                    (meas / 6.0, meas / 12.0)
                };
                add_local(e, &|a, b| v * if a == b { diag } else { off });
            }
        }
        Potential::Function(f) => {
            for e in mesh.elements_in(ElementRegion::Interior) {
                let simplex = mesh.simplex(e);
                let quad = simplex.quadrature(if mesh.dim == 1 { 6 } else { 5 });
                let aff = simplex.shape_affine();
                let mut local = [[0.0; 3]; 3];
                for (x, w) in &quad {
                    let qv = f(x);
                    for a in 0..simplex.nv() {
                        for b in 0..simplex.nv() {
                            local[a][b] += w
                                * qv
                                * crate::kernel::eval_affine(&aff[a], x)
                                * crate::kernel::eval_affine(&aff[b], x);
                        }
                    }
                }
                add_local(e, &|a, b| local[a][b]);
            }
        }
    }
    out
}

/// `B_{ki} = -c ∫_Ω φ_i(y) |x_k - y|^{-d-2s} dy` at the mesh observation nodes.
pub fn assemble_observation(mesh: &Mesh, fo: &FracOrder) -> DMatrix<f64> {
    let points: Vec<[f64; 2]> = mesh.obs_nodes.iter().map(|&k| mesh.nodes[k]).collect();
    assemble_observation_at(mesh, fo, &points)
}

/// Observation matrix at arbitrary points outside the closed domain.
pub fn assemble_observation_at(mesh: &Mesh, fo: &FracOrder, points: &[[f64; 2]]) -> DMatrix<f64> {
    let omega: Vec<(usize, Simplex)> = mesh
        .elements_in(ElementRegion::Interior)
        .into_iter()
        .filter(|&e| {
            mesh.elements[e]
                .vertices()
                .iter()
                .any(|&v| mesh.dof_of_node[v].is_some())
        })
        .map(|e| (e, mesh.simplex(e)))
        .collect();
    let n_far = if mesh.dim == 1 { 6 } else { 4 };
    let mut b = DMatrix::zeros(points.len(), mesh.n_dofs());
    for (k, xk) in points.iter().enumerate() {
        for (e, simplex) in &omega {
            let el = &mesh.elements[*e];
            let local = point_shape_integral(fo, xk, simplex, n_far);
            for a in 0..el.nv {
                if let Some(i) = mesh.dof_of_node[el.verts[a]] {
                    b[(k, i)] -= fo.c_ds * local[a];
                }
            }
        }
    }
    b
}

/// `∫_K φ_a(y) |x - y|^{-d-2s} dy` for a point outside `K`, with subdivision
/// until the point is well separated from each piece.
pub(crate) fn point_shape_integral(fo: &FracOrder, x: &[f64; 2], k: &Simplex, n: usize) -> [f64; 3] {
    let aff = k.shape_affine();
    let mut out = [0.0; 3];
    let mut stack = vec![*k];
    while let Some(piece) = stack.pop() {
        let d = piece.distance_to_point(x);
        if d < 1.5 * piece.diameter() {
            if d <= 1e-14 * piece.diameter() {
                // Only reachable for points on the element; the integral diverges.
                out = [f64::INFINITY; 3];
                return out;
            }
            stack.extend(piece.children());
            continue;
        }
        for (y, w) in piece.quadrature(n) {
            let kv = w * fo.raw_from_sq(crate::kernel::sq_dist(fo.d, x, &y));
            for a in 0..k.nv() {
                out[a] += kv * crate::kernel::eval_affine(&aff[a], &y);
            }
        }
    }
    out
}

/// `b_i = a_R(u_{h,f}, φ_i) = -c ∫_Ω φ_i(y) ∫_{Ω_R} u_{h,f}(x) |x - y|^{-d-2s} dx dy`.
pub fn assemble_bext(mesh: &Mesh, fo: &FracOrder, datum: &ExteriorDatum) -> Result<DVector<f64>> {
    check_order(mesh, fo)?;
    let u = datum.nodal_values(mesh)?;
    for el in &mesh.elements {
        let verts = el.vertices();
        let carries = verts.iter().any(|&v| u[v] != 0.0);
        let touches = verts
            .iter()
            .any(|&v| matches!(mesh.node_region[v], NodeRegion::Interior | NodeRegion::Boundary));
        if carries && touches {
            return Err(Error::Contract(format!(
                "exterior datum support meets the closed domain in cell {:?}",
                el.cell
            )));
        }
    }
    match datum {
        ExteriorDatum::Cutoff { width } => Ok(bext_cutoff(mesh, fo, &u, *width)),
        ExteriorDatum::Nodal(_) => Ok(bext_generic(mesh, fo, &u)),
    }
}

fn omega_support_elements(mesh: &Mesh) -> Vec<usize> {
    mesh.elements_in(ElementRegion::Interior)
        .into_iter()
        .filter(|&e| {
            mesh.elements[e]
                .vertices()
                .iter()
                .any(|&v| mesh.dof_of_node[v].is_some())
        })
        .collect()
}

/// Brute-force path for arbitrary exterior data: every exterior element
/// carrying a nonzero value is paired with every domain element.
fn bext_generic(mesh: &Mesh, fo: &FracOrder, u: &[f64]) -> DVector<f64> {
    let mut b = DVector::zeros(mesh.n_dofs());
    let sources: Vec<usize> = (0..mesh.elements.len())
        .filter(|&e| mesh.element_region[e] != ElementRegion::Interior)
        .filter(|&e| mesh.elements[e].vertices().iter().any(|&v| u[v] != 0.0))
        .collect();
    for e in omega_support_elements(mesh) {
        let el = &mesh.elements[e];
        let ke = mesh.simplex(e);
        let aff_k = ke.shape_affine();
        for &src in &sources {
            let sel = &mesh.elements[src];
            let ks = mesh.simplex(src);
            let aff_s = ks.shape_affine();
            let mut acc = [0.0; 3];
            separated_integral(fo, &ke, &ks, 8, &mut acc, &mut |y, x, w, acc| {
                let ux: f64 = (0..sel.nv)
                    .map(|a| u[sel.verts[a]] * crate::kernel::eval_affine(&aff_s[a], x))
                    .sum();
                for a in 0..el.nv {
                    acc[a] += w * ux * crate::kernel::eval_affine(&aff_k[a], y);
                }
            });
            for a in 0..el.nv {
                if let Some(i) = mesh.dof_of_node[el.verts[a]] {
                    b[i] -= fo.c_ds * acc[a];
                }
            }
        }
    }
    b
}

/// Smallest grid-aligned half-width beyond which the cutoff equals one.
pub fn plateau_half_width(mesh: &Mesh, width: f64) -> f64 {
    let target = mesh.omega_half + mesh.eps_gap + width;
    let steps = (target / mesh.h - 1e-9).ceil();
    (steps * mesh.h).min(mesh.r)
}

/// Fast path for the cutoff: outside the plateau box the interpolant is one,
/// so that part of the inner integral is a difference of box-complement weights.
fn bext_cutoff(mesh: &Mesh, fo: &FracOrder, u: &[f64], width: f64) -> DVector<f64> {
    let lp = plateau_half_width(mesh, width);
    let band: Vec<(usize, Simplex)> = (0..mesh.elements.len())
        .filter(|&e| mesh.element_region[e] != ElementRegion::Interior)
        .filter(|&e| {
            let el = &mesh.elements[e];
            el.vertices().iter().any(|&v| u[v] != 0.0)
                && el
                    .vertices()
                    .iter()
                    .all(|&v| (0..mesh.dim).all(|k| mesh.nodes[v][k].abs() <= lp + 1e-9 * mesh.h))
        })
        .map(|e| (e, mesh.simplex(e)))
        .collect();
    let n_band = if mesh.dim == 1 { 6 } else { 4 };
    let inner_potential = |y: &[f64; 2]| -> f64 {
        let mut p = 0.0;
        if lp < mesh.r {
            p += box_complement_weight(fo.s, fo.d, y, lp) - box_complement_weight(fo.s, fo.d, y, mesh.r);
        }
        for (e, simplex) in &band {
            let el = &mesh.elements[*e];
            let local = point_shape_integral(fo, y, simplex, n_band);
            for a in 0..el.nv {
                p += u[el.verts[a]] * local[a];
            }
        }
        p
    };
    let mut b = DVector::zeros(mesh.n_dofs());
    for e in omega_support_elements(mesh) {
        let el = &mesh.elements[e];
        let simplex = mesh.simplex(e);
        let aff = simplex.shape_affine();
        for (y, w) in simplex.quadrature(if mesh.dim == 1 { 6 } else { 4 }) {
            let p = inner_potential(&y);
            for a in 0..el.nv {
                if let Some(i) = mesh.dof_of_node[el.verts[a]] {
                    b[i] -= fo.c_ds * w * p * crate::kernel::eval_affine(&aff[a], &y);
                }
            }
        }
    }
    b
}
