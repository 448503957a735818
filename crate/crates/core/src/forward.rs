//! Forward problem and synthetic data.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::assembly::{
    assemble_observation_at, assemble_weighted_mass, AssembledOperators, AssemblyOptions, ExteriorDatum, Potential,
};
use crate::error::{Error, Result};
use crate::geometry::{build_mesh, DomainSpec, ElementRegion, Mesh};

/// Relative pivot size below which the forward system counts as singular.
const RESONANCE_PIVOT: f64 = 1e-13;

/// Sampled preprocessed data on the observation nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub mu_clean: DVector<f64>,
    pub mu_noisy: DVector<f64>,
    pub delta: f64,
    pub seed: u64,
    pub norm_y_mu: f64,
    pub obs_points: Vec<[f64; 2]>,
}

impl Measurement {
    /// `k, x[, y], mu_clean, mu_noisy`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let d = if self.obs_points.iter().any(|p| p[1] != 0.0) {
            2
        } else {
            1
        };
        let mut w = crate::output::csv_writer(path)?;
        let mut header = vec!["k", "x"];
        if d == 2 {
            header.push("y");
        }
        header.extend(["mu_clean", "mu_noisy"]);
        w.write_record(&header)?;
        for (k, p) in self.obs_points.iter().enumerate() {
            let mut rec = vec![k.to_string(), crate::output::fmt(p[0])];
            if d == 2 {
                rec.push(crate::output::fmt(p[1]));
            }
            rec.push(crate::output::fmt(self.mu_clean[k]));
            rec.push(crate::output::fmt(self.mu_noisy[k]));
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Solves `(A0 + M_q) u0 = -b_ext`.
pub fn solve_forward(ops: &AssembledOperators, q: Potential<'_>) -> Result<DVector<f64>> {
    let mq = assemble_weighted_mass(&ops.mesh, q);
    solve_forward_with(ops, &mq)
}

pub fn solve_forward_with(ops: &AssembledOperators, mq: &DMatrix<f64>) -> Result<DVector<f64>> {
    let system = &ops.a0 + mq;
    let rhs = -&ops.b_ext;
    solve_checked(system, &rhs)
}

/// Dense solve by Cholesky with an LU fallback for potentials that make the
/// operator indefinite.
fn solve_checked(system: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>> {
    if let Some(ch) = system.clone().cholesky() {
        let l = ch.l_dirty();
        let diag: Vec<f64> = (0..l.nrows()).map(|i| l[(i, i)] * l[(i, i)]).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if min > RESONANCE_PIVOT * max {
            return Ok(ch.solve(rhs));
        }
    }
    let scale = system.amax();
    let lu = system.lu();
    let u = lu.u();
    let min_pivot = (0..u.nrows()).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min);
    if !(min_pivot > RESONANCE_PIVOT * scale) {
        return Err(Error::Resonance(format!(
            "smallest pivot {min_pivot:.3e} relative to matrix scale {scale:.3e}"
        )));
    }
    lu.solve(rhs)
        .ok_or_else(|| Error::Resonance("LU solve failed on the forward system".into()))
}

/// Full nodal vector of an interior FE function.
pub fn nodal_from_dofs(mesh: &Mesh, v: &DVector<f64>) -> Vec<f64> {
    let mut out = vec![0.0; mesh.nodes.len()];
    for (k, &i) in mesh.interior_dofs.iter().enumerate() {
        out[i] = v[k];
    }
    out
}

/// Locates the element of a uniform mesh containing `x` (interior points only).
pub fn locate(mesh: &Mesh, x: &[f64; 2]) -> usize {
    let cells = mesh.cells_per_axis() as i64;
    let cell = |c: f64| (((c + mesh.r) / mesh.h).floor() as i64).clamp(0, cells - 1);
    let cx = cell(x[0]);
    if mesh.dim == 1 {
        return cx as usize;
    }
    let cy = cell(x[1]);
    let dx = x[0] + mesh.r - cx as f64 * mesh.h;
    let dy = x[1] + mesh.r - cy as f64 * mesh.h;
    let base = 2 * (cx * cells + cy) as usize;
    if dx >= dy {
        base
    } else {
        base + 1
    }
}

/// Value of a nodal P1 function at a point.
pub fn evaluate(mesh: &Mesh, nodal: &[f64], x: &[f64; 2]) -> f64 {
    let e = locate(mesh, x);
    let el = &mesh.elements[e];
    let phi = mesh.simplex(e).shape_values(x);
    (0..el.nv).map(|a| nodal[el.verts[a]] * phi[a]).sum()
}

/// `L²` projection of a fine interior function onto the coarse interior
/// space. The fine mesh must be a uniform refinement of the coarse one.
pub fn project_to_coarse(fine: &Mesh, u_fine: &DVector<f64>, coarse: &AssembledOperators) -> Result<DVector<f64>> {
    let cm = &coarse.mesh;
    let ratio = cm.h / fine.h;
    if (ratio - ratio.round()).abs() > 1e-9 || ratio < 1.0 - 1e-12 {
        return Err(Error::Parameter(format!(
            "fine spacing {} does not refine coarse spacing {}",
            fine.h, cm.h
        )));
    }
    let nodal = nodal_from_dofs(fine, u_fine);
    let mut rhs = DVector::zeros(cm.n_dofs());
    let rule = fine_rule(fine.dim);
    for e in fine.elements_in(ElementRegion::Interior) {
        let fs = fine.simplex(e);
        let fel = &fine.elements[e];
        let ce = locate(cm, &fs.centroid());
        let cel = &cm.elements[ce];
        let cs = cm.simplex(ce);
        for (x, w) in rule(&fs) {
            let phi_f = fs.shape_values(&x);
            let uf: f64 = (0..fel.nv).map(|a| nodal[fel.verts[a]] * phi_f[a]).sum();
            let phi_c = cs.shape_values(&x);
            for a in 0..cel.nv {
                if let Some(i) = cm.dof_of_node[cel.verts[a]] {
                    rhs[i] += w * uf * phi_c[a];
                }
            }
        }
    }
    let m0 = crate::assembly::dense(&coarse.m0);
    m0.cholesky()
        .map(|c| c.solve(&rhs))
        .ok_or_else(|| Error::Numerical("coarse mass matrix is not positive definite".into()))
}

/// Quadrature exact for quadratics on a simplex.
fn fine_rule(dim: usize) -> fn(&crate::geometry::Simplex) -> Vec<([f64; 2], f64)> {
    if dim == 1 {
        |s| s.quadrature(2)
    } else {
        |s| crate::quadrature::TriangleRule::midpoint().on(&s.verts).collect()
    }
}

/// Handling of synthetic data generated on the reconstruction mesh.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InverseCrime {
    Forbid,
    Warn,
    Allow,
}

#[derive(Debug, Clone)]
pub struct ForwardOptions {
    /// Coarse-to-fine spacing ratio of the data mesh.
    pub refinement: usize,
    pub inverse_crime: InverseCrime,
    pub assembly: AssemblyOptions,
}

impl Default for ForwardOptions {
    fn default() -> Self {
        Self {
            refinement: 2,
            inverse_crime: InverseCrime::Warn,
            assembly: AssemblyOptions::default(),
        }
    }
}

/// Fine forward solution used to synthesise a measurement.
#[derive(Debug, Clone)]
pub struct ForwardSolution {
    pub fine: Arc<AssembledOperators>,
    pub u0: DVector<f64>,
    pub mu_clean: DVector<f64>,
}

/// Solves the forward problem on the data mesh and samples the clean data
/// at the observation nodes of `coarse`.
pub fn forward_data(
    coarse: &AssembledOperators,
    spec: &DomainSpec,
    q_true: &dyn Fn(&[f64; 2]) -> f64,
    datum: &ExteriorDatum,
    opts: &ForwardOptions,
) -> Result<ForwardSolution> {
    if opts.refinement == 0 {
        return Err(Error::Config("data mesh refinement must be at least 1".into()));
    }
    if opts.refinement == 1 {
        match opts.inverse_crime {
            InverseCrime::Forbid => {
                return Err(Error::Config(
                    "data mesh equals the reconstruction mesh (inverse crime)".into(),
                ))
            }
            InverseCrime::Warn => log::warn!("synthesising data on the reconstruction mesh (inverse crime)"),
            InverseCrime::Allow => {}
        }
    }
    let fine = if opts.refinement == 1 {
        Arc::new(coarse.clone())
    } else {
        let fine_spec = spec.with_h(spec.h / opts.refinement as f64);
        let fine_mesh = Arc::new(build_mesh(&fine_spec)?);
        Arc::new(AssembledOperators::assemble(
            fine_mesh,
            coarse.fo,
            datum,
            &opts.assembly,
        )?)
    };
    forward_on(coarse, fine, q_true)
}

/// Forward solve on already assembled data-mesh operators.
pub fn forward_on(
    coarse: &AssembledOperators,
    fine: Arc<AssembledOperators>,
    q_true: &dyn Fn(&[f64; 2]) -> f64,
) -> Result<ForwardSolution> {
    let u0 = solve_forward(&fine, Potential::Function(q_true))?;
    let same = Arc::ptr_eq(&fine.mesh, &coarse.mesh) || fine.mesh.h == coarse.mesh.h;
    let b_points = if same {
        coarse.b.clone()
    } else {
        let points: Vec<[f64; 2]> = coarse.mesh.obs_nodes.iter().map(|&k| coarse.mesh.nodes[k]).collect();
        assemble_observation_at(&fine.mesh, &fine.fo, &points)
    };
    let mu_clean = &b_points * &u0;
    Ok(ForwardSolution { fine, u0, mu_clean })
}

/// `μ^δ = μ + δ ‖μ‖_Y ξ / ‖ξ‖_Y` with `ξ` standard Gaussian from `seed`.
pub fn add_noise(coarse: &AssembledOperators, mu_clean: &DVector<f64>, delta: f64, seed: u64) -> Result<Measurement> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Parameter(format!(
            "noise level must be nonnegative, got {delta}"
        )));
    }
    let norm_y_mu = coarse.norm_y(mu_clean);
    let mu_noisy = if delta == 0.0 {
        mu_clean.clone()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let xi = DVector::from_fn(mu_clean.len(), |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            z
        });
        let norm_xi = coarse.norm_y(&xi);
        if norm_xi == 0.0 {
            return Err(Error::Numerical("noise sample has zero norm".into()));
        }
        mu_clean + xi * (delta * norm_y_mu / norm_xi)
    };
    Ok(Measurement {
        mu_clean: mu_clean.clone(),
        mu_noisy,
        delta,
        seed,
        norm_y_mu,
        obs_points: coarse.mesh.obs_nodes.iter().map(|&k| coarse.mesh.nodes[k]).collect(),
    })
}

/// Forward solve on the data mesh followed by noise.
pub fn synthesize_measurement(
    coarse: &AssembledOperators,
    spec: &DomainSpec,
    q_true: &dyn Fn(&[f64; 2]) -> f64,
    datum: &ExteriorDatum,
    delta: f64,
    seed: u64,
    opts: &ForwardOptions,
) -> Result<(Measurement, ForwardSolution)> {
    let sol = forward_data(coarse, spec, q_true, datum, opts)?;
    let meas = add_noise(coarse, &sol.mu_clean, delta, seed)?;
    Ok((meas, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;
    use crate::kernel::FracOrder;

    fn ops1d(h: f64) -> (DomainSpec, AssembledOperators) {
        let spec = DomainSpec {
            dim: 1,
            r: 2.0,
            omega_half: 1.0,
            eps_gap: 0.1,
            omega_prime: Aabb::cube(1, 0.5),
            h,
        };
        let mesh = Arc::new(build_mesh(&spec).unwrap());
        let fo = FracOrder::new(0.6, 1).unwrap();
        let ops =
            AssembledOperators::assemble(mesh, fo, &ExteriorDatum::default(), &AssemblyOptions::default()).unwrap();
        (spec, ops)
    }

    #[test]
    fn forward_residual_is_small() {
        let (_, ops) = ops1d(0.1);
        let u0 = solve_forward(&ops, Potential::Zero).unwrap();
        let res = &ops.a0 * &u0 + &ops.b_ext;
        assert!(res.amax() < 1e-10 * ops.b_ext.amax());
    }

    #[test]
    fn noise_has_exact_relative_level() {
        let (spec, ops) = ops1d(0.1);
        let q = |_: &[f64; 2]| 0.0;
        let opts = ForwardOptions::default();
        let (m, _) = synthesize_measurement(&ops, &spec, &q, &ExteriorDatum::default(), 1e-2, 7, &opts).unwrap();
        let rel = ops.norm_y(&(&m.mu_noisy - &m.mu_clean)) / m.norm_y_mu;
        assert!((rel - 1e-2).abs() < 1e-14);
        let zero = add_noise(&ops, &m.mu_clean, 0.0, 7).unwrap();
        assert_eq!(zero.mu_noisy, zero.mu_clean);
    }

    #[test]
    fn negative_potential_at_eigenvalue_is_resonant() {
        let (_, ops) = ops1d(0.1);
        // Shift by the smallest generalised eigenvalue of (A0, M0).
        let m0 = crate::assembly::dense(&ops.m0);
        let l = m0.clone().cholesky().unwrap();
        let linv = l.l().try_inverse().unwrap();
        let c = &linv * &ops.a0 * linv.transpose();
        let lam = c.symmetric_eigen().eigenvalues.min();
        let mq = &m0 * (-lam);
        let err = solve_forward_with(&ops, &mq).unwrap_err();
        assert!(matches!(err, Error::Resonance(_)), "{err:?}");
    }

    #[test]
    fn projection_reproduces_coarse_functions() {
        let (spec, coarse) = ops1d(0.1);
        let fine_mesh = build_mesh(&spec.with_h(0.05)).unwrap();
        let v = DVector::from_fn(coarse.n_dofs(), |i, _| (i as f64 * 0.3).sin());
        let nodal = nodal_from_dofs(&coarse.mesh, &v);
        let vf = DVector::from_iterator(
            fine_mesh.n_dofs(),
            fine_mesh
                .interior_dofs
                .iter()
                .map(|&i| evaluate(&coarse.mesh, &nodal, &fine_mesh.nodes[i])),
        );
        let back = project_to_coarse(&fine_mesh, &vf, &coarse).unwrap();
        assert!((back - v).amax() < 1e-12);
    }
}
