//! Coefficient-recovery methods selectable by name.

use std::collections::BTreeMap;

use super::tv::{adaptive_alpha_tv, admm_tv, debias, AdmmOptions};
use super::{reconstruct_q_quadratic, CoefficientField, CoefficientProblem, MethodDetails};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct MethodParams {
    pub alpha_q: f64,
    /// Fixed TV weight; `None` selects it adaptively.
    pub alpha_tv: Option<f64>,
    pub admm: AdmmOptions,
    pub debias: bool,
}

impl MethodParams {
    pub fn new(alpha_q: f64) -> Self {
        Self {
            alpha_q,
            alpha_tv: None,
            admm: AdmmOptions::default(),
            debias: true,
        }
    }
}

pub trait CoefficientMethod: Send + Sync {
    fn name(&self) -> &'static str;
    fn reconstruct(&self, problem: &CoefficientProblem, params: &MethodParams) -> Result<CoefficientField>;
}

/// Element-wise stabilised least squares.
pub struct Quadratic;

impl CoefficientMethod for Quadratic {
    fn name(&self) -> &'static str {
        "quadratic"
    }

    fn reconstruct(&self, problem: &CoefficientProblem, params: &MethodParams) -> Result<CoefficientField> {
        reconstruct_q_quadratic(problem, params.alpha_q)
    }
}

/// TV-regularised least squares with optional debiasing (1D only).
pub struct TotalVariation;

impl CoefficientMethod for TotalVariation {
    fn name(&self) -> &'static str {
        "tv"
    }

    fn reconstruct(&self, problem: &CoefficientProblem, params: &MethodParams) -> Result<CoefficientField> {
        if problem.dim != 1 {
            return Err(Error::Parameter(
                "TV recovery is only defined on 1D coefficient meshes".into(),
            ));
        }
        let baseline = reconstruct_q_quadratic(problem, params.alpha_q)?;
        let (alpha_tv, selection) = match params.alpha_tv {
            Some(a) if a >= 0.0 => (a, None),
            Some(a) => return Err(Error::Parameter(format!("alpha_tv must be nonnegative, got {a}"))),
            None => {
                let sel = adaptive_alpha_tv(&baseline.values, problem, params.alpha_q, &params.admm);
                (sel.alpha_tv, Some(sel))
            }
        };
        let g = problem.gram_diagonal(params.alpha_q);
        let (raw, report) = admm_tv(&g, &problem.rhs(), alpha_tv, &params.admm);
        let mut flags = Vec::new();
        if !report.converged {
            flags.push(format!(
                "admm stopped after {} iterations without convergence",
                report.iterations
            ));
        }
        let (values, debias_level) = if params.debias {
            let d = debias(&raw, problem);
            if d.level.is_none() {
                flags.push("debias: empty support".into());
            }
            if d.clamped {
                flags.push("debias: level clamped to [0, 1]".into());
            }
            (d.values, d.level)
        } else {
            (raw.clone(), None)
        };
        Ok(CoefficientField {
            elements: problem.elements.clone(),
            values,
            alpha_q: params.alpha_q,
            method: self.name().into(),
            alpha_tv: Some(alpha_tv),
            converged: report.converged,
            flags,
            details: MethodDetails::Tv {
                baseline: baseline.values,
                raw,
                selection,
                report,
                debias_level,
            },
        })
    }
}

pub struct MethodRegistry {
    methods: BTreeMap<&'static str, Box<dyn CoefficientMethod>>,
}

impl MethodRegistry {
    pub fn empty() -> Self {
        Self {
            methods: BTreeMap::new(),
        }
    }

    pub fn register(&mut self, method: Box<dyn CoefficientMethod>) {
        self.methods.insert(method.name(), method);
    }

    pub fn get(&self, name: &str) -> Result<&dyn CoefficientMethod> {
        self.methods.get(name).map(|m| m.as_ref()).ok_or_else(|| {
            Error::Config(format!(
                "unknown coefficient method '{name}' (available: {})",
                self.names().join(", ")
            ))
        })
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.methods.keys().copied().collect()
    }
}

impl Default for MethodRegistry {
    fn default() -> Self {
        let mut r = Self::empty();
        r.register(Box::new(Quadratic));
        r.register(Box::new(TotalVariation));
        r
    }
}
