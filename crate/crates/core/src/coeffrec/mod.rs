//! Recovery of the potential from the reconstructed state.

use nalgebra::{DMatrix, DVector};

use crate::assembly::{dense, AssembledOperators};
use crate::error::{Error, Result};
use crate::forward::nodal_from_dofs;
use crate::geometry::Mesh;

pub mod registry;
pub mod tv;

pub use registry::{CoefficientMethod, MethodParams, MethodRegistry, Quadratic, TotalVariation};
pub use tv::{
    adaptive_alpha_tv, admm_tv, count_jumps, debias, soft_threshold, AdaptiveSelection, AdmmOptions, AdmmReport,
    Debiased,
};

/// Solves `M0 w = A0 v + b_ext` for the interior fractional Laplacian.
pub fn recover_wh(ops: &AssembledOperators, v: &DVector<f64>) -> Result<DVector<f64>> {
    let rhs = &ops.a0 * v + &ops.b_ext;
    dense(&ops.m0)
        .cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Numerical("interior mass matrix is not positive definite".into()))
}

/// Element integrals of the state `u` and of `w` on the coefficient elements.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientProblem {
    pub dim: usize,
    pub elements: Vec<usize>,
    pub measures: Vec<f64>,
    /// `∫_K u²`.
    pub uu: Vec<f64>,
    /// `∫_K w u`.
    pub wu: Vec<f64>,
    /// `∫_K w²`.
    pub ww: Vec<f64>,
}

impl CoefficientProblem {
    /// `u`, `w` are nodal vectors over all mesh nodes.
    pub fn new(mesh: &Mesh, elements: &[usize], u: &[f64], w: &[f64]) -> Self {
        let n = elements.len();
        let mut out = Self {
            dim: mesh.dim,
            elements: elements.to_vec(),
            measures: Vec::with_capacity(n),
            uu: Vec::with_capacity(n),
            wu: Vec::with_capacity(n),
            ww: Vec::with_capacity(n),
        };
        for &e in elements {
            let simplex = mesh.simplex(e);
            let el = &mesh.elements[e];
            let quad: Vec<([f64; 2], f64)> = if mesh.dim == 1 {
                simplex.quadrature(2)
            } else {
                crate::quadrature::TriangleRule::midpoint().on(&simplex.verts).collect()
            };
            let (mut uu, mut wu, mut ww) = (0.0, 0.0, 0.0);
            for (x, wt) in quad {
                let phi = simplex.shape_values(&x);
                let ux: f64 = (0..el.nv).map(|a| u[el.verts[a]] * phi[a]).sum();
                let wx: f64 = (0..el.nv).map(|a| w[el.verts[a]] * phi[a]).sum();
                uu += wt * ux * ux;
                wu += wt * wx * ux;
                ww += wt * wx * wx;
            }
            out.measures.push(simplex.measure());
            out.uu.push(uu);
            out.wu.push(wu);
            out.ww.push(ww);
        }
        out
    }

    /// From interior coefficient vectors of the state and of `w`.
    pub fn from_state(mesh: &Mesh, elements: &[usize], v: &DVector<f64>, w: &DVector<f64>) -> Self {
        Self::new(mesh, elements, &nodal_from_dofs(mesh, v), &nodal_from_dofs(mesh, w))
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    /// Diagonal of `G_α`: `∫_K (u² + α_q)`.
    pub fn gram_diagonal(&self, alpha_q: f64) -> Vec<f64> {
        self.uu
            .iter()
            .zip(&self.measures)
            .map(|(u, m)| u + alpha_q * m)
            .collect()
    }

    pub fn gram_matrix(&self, alpha_q: f64) -> DMatrix<f64> {
        DMatrix::from_diagonal(&DVector::from_vec(self.gram_diagonal(alpha_q)))
    }

    /// Right-hand side `-∫_K w u`.
    pub fn rhs(&self) -> Vec<f64> {
        self.wu.iter().map(|x| -x).collect()
    }

    /// `‖w + q u‖²_{L²(Ω')} + α_q ‖q‖²_{L²(Ω')}`.
    pub fn quadratic_objective(&self, q: &[f64], alpha_q: f64) -> f64 {
        (0..self.len())
            .map(|k| self.ww[k] + 2.0 * q[k] * self.wu[k] + q[k] * q[k] * (self.uu[k] + alpha_q * self.measures[k]))
            .sum()
    }
}

/// Element-wise constant potential on the coefficient subdomain.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientField {
    pub elements: Vec<usize>,
    pub values: Vec<f64>,
    pub alpha_q: f64,
    pub method: String,
    pub alpha_tv: Option<f64>,
    pub converged: bool,
    pub flags: Vec<String>,
    pub details: MethodDetails,
}

/// Intermediate results that some methods expose.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum MethodDetails {
    #[default]
    None,
    Tv {
        baseline: Vec<f64>,
        raw: Vec<f64>,
        selection: Option<AdaptiveSelection>,
        report: AdmmReport,
        debias_level: Option<f64>,
    },
}

impl CoefficientField {
    /// Values on all mesh elements, zero outside the coefficient subdomain.
    pub fn zero_extended(&self, mesh: &Mesh) -> Vec<f64> {
        let mut out = vec![0.0; mesh.elements.len()];
        for (&e, &v) in self.elements.iter().zip(&self.values) {
            out[e] = v;
        }
        out
    }

    pub fn max_value(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Centroid of the element carrying the largest value.
    pub fn argmax(&self, mesh: &Mesh) -> [f64; 2] {
        let k = (0..self.values.len())
            .max_by(|&a, &b| self.values[a].total_cmp(&self.values[b]))
            .unwrap_or(0);
        mesh.simplex(self.elements[k]).centroid()
    }

    /// `max_K |q_K - q(c_K)|` over element centroids.
    pub fn linf_error(&self, mesh: &Mesh, q_true: &dyn Fn(&[f64; 2]) -> f64) -> f64 {
        self.elements
            .iter()
            .zip(&self.values)
            .map(|(&e, &v)| (v - q_true(&mesh.simplex(e).centroid())).abs())
            .fold(0.0, f64::max)
    }

    /// `‖q_h - q‖_{L²(Ω')}` by element quadrature.
    pub fn l2_error(&self, mesh: &Mesh, q_true: &dyn Fn(&[f64; 2]) -> f64) -> f64 {
        let mut acc = 0.0;
        for (&e, &v) in self.elements.iter().zip(&self.values) {
            for (x, w) in mesh.simplex(e).quadrature(if mesh.dim == 1 { 6 } else { 4 }) {
                let d = v - q_true(&x);
                acc += w * d * d;
            }
        }
        acc.sqrt()
    }

    /// `x[, y], q` per element centroid.
    pub fn write_csv(&self, mesh: &Mesh, path: &std::path::Path) -> Result<()> {
        let mut w = crate::output::csv_writer(path)?;
        if mesh.dim == 1 {
            w.write_record(["x", "q"])?;
        } else {
            w.write_record(["x", "y", "q"])?;
        }
        for (&e, &v) in self.elements.iter().zip(&self.values) {
            let c = mesh.simplex(e).centroid();
            let mut rec = vec![crate::output::fmt(c[0])];
            if mesh.dim == 2 {
                rec.push(crate::output::fmt(c[1]));
            }
            rec.push(crate::output::fmt(v));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// P0 minimiser of `‖w + q u‖² + α_q ‖q‖²`, element by element.
pub fn reconstruct_q_quadratic(problem: &CoefficientProblem, alpha_q: f64) -> Result<CoefficientField> {
    if !(alpha_q > 0.0 && alpha_q.is_finite()) {
        return Err(Error::Parameter(format!("alpha_q must be positive, got {alpha_q}")));
    }
    let g = problem.gram_diagonal(alpha_q);
    let values: Vec<f64> = problem.rhs().iter().zip(&g).map(|(b, g)| b / g).collect();
    Ok(CoefficientField {
        elements: problem.elements.clone(),
        values,
        alpha_q,
        method: "quadratic".into(),
        alpha_tv: None,
        converged: true,
        flags: Vec::new(),
        details: MethodDetails::None,
    })
}
