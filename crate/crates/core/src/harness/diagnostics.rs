//! Consistency terms of the preprocessed data.
//!
//! `η_t` is the Y-norm of `c u_{h,f}(x_k) ∫_{R^d \ Ω_R} |x_k - y|^{-d-2s} dy`.
//! `η_I` compares the fluxes of the exact datum and of its interpolant. The
//! pointwise flux of a P1 function is infinite at kinks when `s ≥ 1/2`, so
//! the flux is taken in the L²(W)-projected sense,
//! `W^{-1} [a(ψ, ϑ_k)]_k`, and the exact datum is replaced by its
//! interpolant on the mesh of width `h/4` (1D only).

use nalgebra::DVector;

use crate::assembly::{assemble_mass, dense, energy_action, ExteriorDatum, MassRegion};
use crate::error::{Error, Result};
use crate::forward::evaluate;
use crate::geometry::{build_mesh, DomainSpec, Mesh};
use crate::kernel::{tail_weight, FracOrder};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConsistencyRow {
    pub h: f64,
    pub r: f64,
    pub n_obs: usize,
    pub eta_i: Option<f64>,
    pub eta_t: f64,
}

fn y_norm(mesh: &Mesh, v: &DVector<f64>) -> f64 {
    let w = assemble_mass(mesh, MassRegion::Observation);
    crate::assembly::quad_form_sparse(&w, v).max(0.0).sqrt()
}

pub fn eta_t(mesh: &Mesh, fo: &FracOrder, datum: &ExteriorDatum) -> Result<f64> {
    eta_t_at(mesh, fo, datum, mesh.r)
}

/// `η_t` on the observation set of `mesh` with the tail taken outside `(-radius, radius)^d`.
pub fn eta_t_at(mesh: &Mesh, fo: &FracOrder, datum: &ExteriorDatum, radius: f64) -> Result<f64> {
    if radius < mesh.r {
        return Err(Error::Parameter(format!(
            "truncation radius {radius} is below the mesh radius {}",
            mesh.r
        )));
    }
    let u_hf = datum.nodal_values(mesh)?;
    let mut v = DVector::zeros(mesh.n_obs());
    for (k, &node) in mesh.obs_nodes.iter().enumerate() {
        if u_hf[node] != 0.0 {
            v[k] = fo.c_ds * u_hf[node] * tail_weight(fo, &mesh.nodes[node], radius)?;
        }
    }
    Ok(y_norm(mesh, &v))
}

pub fn eta_i(spec: &DomainSpec, fo: &FracOrder, datum: &ExteriorDatum) -> Result<f64> {
    if spec.dim != 1 {
        return Err(Error::Parameter(
            "the interpolation consistency term is computed in 1D only".into(),
        ));
    }
    let coarse = build_mesh(spec)?;
    let fine = build_mesh(&spec.with_h(spec.h / 4.0))?;
    let u_coarse = datum.nodal_values(&coarse)?;
    let u_fine = datum.nodal_values(&fine)?;
    let psi: Vec<f64> = fine
        .nodes
        .iter()
        .zip(&u_fine)
        .map(|(x, &uf)| {
            let d = uf - evaluate(&coarse, &u_coarse, x);
            if d.abs() < 1e-15 {
                0.0
            } else {
                d
            }
        })
        .collect();
    let action = energy_action(&fine, fo, &psi)?;
    let h = spec.h;
    let mut g = DVector::zeros(coarse.n_obs());
    for (k, &node) in coarse.obs_nodes.iter().enumerate() {
        let xk = coarse.nodes[node][0];
        for (j, x) in fine.nodes.iter().enumerate() {
            let hat = 1.0 - (x[0] - xk).abs() / h;
            if hat > 0.0 {
                g[k] += hat * action[j];
            }
        }
    }
    let w = dense(&assemble_mass(&coarse, MassRegion::Observation));
    let chol = w
        .cholesky()
        .ok_or_else(|| Error::Numerical("observation mass matrix is not positive definite".into()))?;
    let proj = chol.solve(&g);
    Ok(g.dot(&proj).max(0.0).sqrt())
}

/// `η_I` and `η_t` on the mesh levels `h, h/2, ...` and the truncation radii
/// in `r_list` (the domain radius when empty). The observation set stays that
/// of the configured domain so that only the tail changes with `R`.
pub fn consistency_diagnostics(
    spec: &DomainSpec,
    s: f64,
    datum: &ExteriorDatum,
    r_list: &[f64],
    h_levels: usize,
) -> Result<Vec<ConsistencyRow>> {
    let fo = FracOrder::new(s, spec.dim)?;
    let radii: Vec<f64> = if r_list.is_empty() {
        vec![spec.r]
    } else {
        r_list.to_vec()
    };
    let mut rows = Vec::new();
    for level in 0..h_levels.max(1) {
        let h = spec.h / 2f64.powi(level as i32);
        let level_spec = spec.with_h(h);
        let eta_i_val = if spec.dim == 1 {
            Some(eta_i(&level_spec, &fo, datum)?)
        } else {
            None
        };
        let mesh = build_mesh(&level_spec)?;
        for &r in &radii {
            rows.push(ConsistencyRow {
                h,
                r,
                n_obs: mesh.n_obs(),
                eta_i: eta_i_val,
                eta_t: eta_t_at(&mesh, &fo, datum, r)?,
            });
        }
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Aabb;

    fn spec(h: f64, r: f64) -> DomainSpec {
        DomainSpec {
            dim: 1,
            r,
            omega_half: 1.0,
            eps_gap: 0.1,
            omega_prime: Aabb::cube(1, 0.5),
            h,
        }
    }

    #[test]
    fn tail_term_vanishes_without_datum() {
        let mesh = build_mesh(&spec(0.1, 2.0)).unwrap();
        let fo = FracOrder::new(0.6, 1).unwrap();
        let zero = ExteriorDatum::Nodal(vec![0.0; mesh.nodes.len()]);
        assert_eq!(eta_t(&mesh, &fo, &zero).unwrap(), 0.0);
        assert!(eta_t(&mesh, &fo, &ExteriorDatum::default()).unwrap() > 0.0);
    }

    #[test]
    fn interpolation_term_decreases_with_h() {
        let fo = FracOrder::new(0.3, 1).unwrap();
        let datum = ExteriorDatum::Cutoff { width: 0.4 };
        let coarse = eta_i(&spec(0.1, 2.0), &fo, &datum).unwrap();
        let fine = eta_i(&spec(0.05, 2.0), &fo, &datum).unwrap();
        assert!(fine < coarse, "{fine} vs {coarse}");
    }
}
