//! Tikhonov recovery of the interior state from exterior data.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::assembly::{dense, spmv, AssembledOperators};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct StateReconstruction {
    /// Coefficients of the interior state `u_{0,h}^α`.
    pub v: DVector<f64>,
    pub alpha: f64,
    /// `‖B v - μ^δ‖_Y`.
    pub residual_y: f64,
    /// `v^T S v`.
    pub reg_norm: f64,
}

impl StateReconstruction {
    /// Tikhonov functional value.
    pub fn objective(&self) -> f64 {
        self.residual_y * self.residual_y + self.alpha * self.reg_norm
    }
}

/// Which factorisation solves the Tikhonov problem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StateSolver {
    /// Cholesky factorisation of the normal matrix.
    Cholesky,
    /// Householder QR of the stacked least-squares system; accurate for tiny `α`.
    #[default]
    Qr,
}

/// Factorisations shared by all solves on one discretisation.
///
/// With `W = L_W L_W^T`, `S = L_S L_S^T` and `L_W^T B = Q_1 R_1` the
/// Tikhonov functional equals `‖R_1 v - Q_1^T L_W^T μ‖² + α ‖L_S^T v‖²` up to
/// a constant.
#[derive(Debug, Clone)]
pub struct NormalOperator {
    pub btwb: DMatrix<f64>,
    pub btw: DMatrix<f64>,
    r1: DMatrix<f64>,
    /// `Q_1^T L_W^T`.
    proj: DMatrix<f64>,
    /// `L_S^T`.
    ls_t: DMatrix<f64>,
    pub solver: StateSolver,
}

impl NormalOperator {
    pub fn new(ops: &AssembledOperators) -> Result<Self> {
        let (nw, n0) = ops.b.shape();
        let mut wb = DMatrix::zeros(nw, n0);
        for j in 0..n0 {
            let col = spmv(&ops.w_obs, &ops.b.column(j).into_owned());
            wb.set_column(j, &col);
        }
        let btw = wb.transpose();
        let btwb = ops.b.tr_mul(&wb);
        let btwb = (&btwb + btwb.transpose()) * 0.5;
        let lw = dense(&ops.w_obs)
            .cholesky()
            .ok_or_else(|| Error::Numerical("observation mass matrix is not positive definite".into()))?
            .l();
        let ls_t = ops
            .s
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("regularisation matrix is not positive definite".into()))?
            .l()
            .transpose();
        let lwt = lw.transpose();
        let qr = (&lwt * &ops.b).qr();
        let proj = qr.q().tr_mul(&lwt);
        let r1 = qr.r();
        Ok(Self {
            btwb,
            btw,
            r1,
            proj,
            ls_t,
            solver: StateSolver::default(),
        })
    }

    pub fn with_solver(mut self, solver: StateSolver) -> Self {
        self.solver = solver;
        self
    }

    /// `K_α = B^T W B + α S`.
    pub fn system(&self, ops: &AssembledOperators, alpha: f64) -> DMatrix<f64> {
        &self.btwb + &ops.s * alpha
    }

    /// Minimises `‖B v - μ‖_Y² + α v^T S v`, i.e. solves `(B^T W B + α S) v = B^T W μ`.
    pub fn solve(&self, ops: &AssembledOperators, mu: &DVector<f64>, alpha: f64) -> Result<StateReconstruction> {
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::Parameter(format!(
                "Tikhonov weight must be positive, got {alpha}"
            )));
        }
        if mu.len() != ops.n_obs() {
            return Err(Error::Parameter(format!(
                "data vector has {} entries for {} observation nodes",
                mu.len(),
                ops.n_obs()
            )));
        }
        let v = match self.solver {
            StateSolver::Cholesky => self
                .system(ops, alpha)
                .cholesky()
                .ok_or_else(|| {
                    Error::Numerical(format!("normal matrix is not positive definite at alpha = {alpha:e}"))
                })?
                .solve(&(&self.btw * mu)),
            StateSolver::Qr => self.solve_stacked(mu, alpha)?,
        };
        let residual_y = ops.norm_y(&(&ops.b * &v - mu));
        let reg_norm = v.dot(&(&ops.s * &v));
        Ok(StateReconstruction {
            v,
            alpha,
            residual_y,
            reg_norm,
        })
    }

    fn solve_stacked(&self, mu: &DVector<f64>, alpha: f64) -> Result<DVector<f64>> {
        let n0 = self.r1.ncols();
        let m1 = self.r1.nrows();
        let mut a = DMatrix::zeros(m1 + n0, n0);
        a.view_mut((0, 0), (m1, n0)).copy_from(&self.r1);
        a.view_mut((m1, 0), (n0, n0)).copy_from(&(&self.ls_t * alpha.sqrt()));
        let mut rhs = DVector::zeros(m1 + n0);
        rhs.rows_mut(0, m1).copy_from(&(&self.proj * mu));
        let qr = a.qr();
        let qtb = qr.q().tr_mul(&rhs);
        qr.r()
            .solve_upper_triangular(&qtb)
            .ok_or_else(|| Error::Numerical(format!("stacked least-squares system is singular at alpha = {alpha:e}")))
    }
}

pub fn reconstruct_state(ops: &AssembledOperators, mu: &DVector<f64>, alpha: f64) -> Result<StateReconstruction> {
    NormalOperator::new(ops)?.solve(ops, mu, alpha)
}

/// A priori rule `α = max(c δ^p, floor)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerRule {
    pub p: f64,
    pub c: f64,
    #[serde(default = "default_floor")]
    pub floor: f64,
}

fn default_floor() -> f64 {
    1e-14
}

impl Default for PowerRule {
    fn default() -> Self {
        Self {
            p: 1.5,
            c: 1.0,
            floor: default_floor(),
        }
    }
}

pub fn alpha_rule(delta: f64, rule: &PowerRule) -> Result<f64> {
    if !(delta >= 0.0 && delta.is_finite()) {
        return Err(Error::Parameter(format!(
            "noise level must be nonnegative, got {delta}"
        )));
    }
    if !(rule.p > 0.0 && rule.p < 2.0) {
        return Err(Error::Parameter(format!(
            "exponent p = {} must lie in (0, 2) so that delta^2 / alpha -> 0",
            rule.p
        )));
    }
    if !(rule.c > 0.0) || !(rule.floor > 0.0) {
        return Err(Error::Parameter("rule constant and floor must be positive".into()));
    }
    Ok((rule.c * delta.powf(rule.p)).max(rule.floor))
}

/// State errors in the `S` norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorDecomposition {
    pub total: f64,
    pub bias: f64,
    pub noise: f64,
    /// `L²(Ω)` norm of the total error.
    pub total_l2: f64,
}

pub fn error_decomposition(
    ops: &AssembledOperators,
    normal: &NormalOperator,
    mu_clean: &DVector<f64>,
    mu_noisy: &DVector<f64>,
    alpha: f64,
    u0_reference: &DVector<f64>,
) -> Result<ErrorDecomposition> {
    let clean = normal.solve(ops, mu_clean, alpha)?;
    let noisy = normal.solve(ops, mu_noisy, alpha)?;
    let err = &noisy.v - u0_reference;
    Ok(ErrorDecomposition {
        total: ops.norm_s(&err),
        bias: ops.norm_s(&(&clean.v - u0_reference)),
        noise: ops.norm_s(&(&noisy.v - &clean.v)),
        total_l2: ops.norm_l2(&err),
    })
}
