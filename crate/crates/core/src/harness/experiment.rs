//! End-to-end runs over a noise ladder.

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use nalgebra::DVector;

use super::config::ExperimentConfig;
use super::fit::{fit_stability, StabilityFit};
use crate::assembly::{cache, AssembledOperators, AssemblyOptions, ExteriorDatum};
use crate::coeffrec::{recover_wh, CoefficientField, CoefficientProblem, MethodDetails, MethodRegistry};
use crate::error::{Error, Result};
use crate::forward::{
    add_noise, forward_on, nodal_from_dofs, project_to_coarse, ForwardSolution, InverseCrime, Measurement,
};
use crate::geometry::{build_mesh, coefficient_elements, DomainSpec, Mesh};
use crate::kernel::FracOrder;
use crate::output::{csv_writer, fmt, write_table};
use crate::staterec::{alpha_rule, error_decomposition, ErrorDecomposition, NormalOperator, StateReconstruction};

/// Assembles, reading and writing `cache_dir` when given.
pub fn assemble_cached(
    spec: &DomainSpec,
    fo: FracOrder,
    datum: &ExteriorDatum,
    cache_dir: Option<&Path>,
) -> Result<AssembledOperators> {
    let mesh = Arc::new(build_mesh(spec)?);
    let Some(dir) = cache_dir else {
        return AssembledOperators::assemble(mesh, fo, datum, &AssemblyOptions::default());
    };
    let key = cache::operator_key(spec, fo.s, datum);
    let path = dir.join(format!("ops_{key:016x}.bin"));
    if let Some(ops) = cache::load(&path, key, mesh.clone(), fo, datum)? {
        log::info!("loaded operators from {}", path.display());
        return Ok(ops);
    }
    let ops = AssembledOperators::assemble(mesh, fo, datum, &AssemblyOptions::default())?;
    cache::save(&path, key, &ops)?;
    Ok(ops)
}

/// Everything shared by the ladder entries.
pub struct Prepared {
    pub config: ExperimentConfig,
    pub ops: AssembledOperators,
    pub forward: ForwardSolution,
    /// Data-mesh state projected onto the reconstruction space.
    pub u0_ref: DVector<f64>,
    pub normal: NormalOperator,
    pub elements: Vec<usize>,
    pub timings: StageTimings,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub assembly: f64,
    pub forward: f64,
    pub normal: f64,
}

impl Prepared {
    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.ops.mesh
    }

    pub fn q_true(&self) -> impl Fn(&[f64; 2]) -> f64 + '_ {
        move |x| self.config.potential.eval(x)
    }
}

pub fn prepare(config: &ExperimentConfig) -> Result<Prepared> {
    config.validate()?;
    let spec = &config.domain;
    let fo = FracOrder::new(config.s, spec.dim).map_err(|e| e.at_stage("assembly"))?;
    let datum = config.datum.datum();
    let cache_dir = config.cache_dir.as_deref();

    let t = Instant::now();
    let ops = assemble_cached(spec, fo, &datum, cache_dir).map_err(|e| e.at_stage("assembly"))?;
    let assembly = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let opts = config.forward.options();
    let fine = if opts.refinement == 1 {
        match opts.inverse_crime {
            InverseCrime::Forbid => {
                return Err(
                    Error::Config("data mesh equals the reconstruction mesh (inverse crime)".into())
                        .at_stage("forward"),
                )
            }
            InverseCrime::Warn => log::warn!("synthesising data on the reconstruction mesh (inverse crime)"),
            InverseCrime::Allow => {}
        }
        Arc::new(ops.clone())
    } else {
        let fine_spec = spec.with_h(spec.h / opts.refinement as f64);
        Arc::new(assemble_cached(&fine_spec, fo, &datum, cache_dir).map_err(|e| e.at_stage("forward"))?)
    };
    let q = |x: &[f64; 2]| config.potential.eval(x);
    let forward = forward_on(&ops, fine, &q).map_err(|e| e.at_stage("forward"))?;
    let u0_ref = project_to_coarse(&forward.fine.mesh, &forward.u0, &ops).map_err(|e| e.at_stage("forward"))?;
    let forward_time = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let normal = NormalOperator::new(&ops)
        .map(|n| n.with_solver(config.solver))
        .map_err(|e| e.at_stage("state"))?;
    let normal_time = t.elapsed().as_secs_f64();
    let elements = coefficient_elements(&ops.mesh, &spec.omega_prime).map_err(|e| e.at_stage("coefficient"))?;
    Ok(Prepared {
        config: config.clone(),
        ops,
        forward,
        u0_ref,
        normal,
        elements,
        timings: StageTimings {
            assembly,
            forward: forward_time,
            normal: normal_time,
        },
    })
}

/// Outcome of one noise level.
#[derive(Debug, Clone)]
pub struct DeltaRecord {
    pub index: usize,
    pub delta: f64,
    pub measurement: Measurement,
    pub state: StateReconstruction,
    pub errors: ErrorDecomposition,
    /// Reconstructed total state `v + u_{h,f}` at all nodes.
    pub u_nodal: Vec<f64>,
    pub coefficient: CoefficientField,
    pub q_err_linf: f64,
    pub q_err_rel: f64,
    pub q_err_l2: f64,
    pub q_argmax: [f64; 2],
    pub seconds: f64,
}

pub fn run_delta(prep: &Prepared, registry: &MethodRegistry, index: usize, delta: f64) -> Result<DeltaRecord> {
    let cfg = &prep.config;
    let ops = &prep.ops;
    let t = Instant::now();
    let seed = cfg.seed_for(index);
    let measurement = add_noise(ops, &prep.forward.mu_clean, delta, seed).map_err(|e| e.at_stage("noise"))?;
    let alpha = alpha_rule(delta, &cfg.alpha).map_err(|e| e.at_stage("state"))?;
    let state = prep
        .normal
        .solve(ops, &measurement.mu_noisy, alpha)
        .map_err(|e| e.at_stage("state"))?;
    let errors = error_decomposition(
        ops,
        &prep.normal,
        &measurement.mu_clean,
        &measurement.mu_noisy,
        alpha,
        &prep.u0_ref,
    )
    .map_err(|e| e.at_stage("state"))?;

    let w = recover_wh(ops, &state.v).map_err(|e| e.at_stage("coefficient"))?;
    let mesh = &ops.mesh;
    let mut u_nodal = nodal_from_dofs(mesh, &state.v);
    for (u, f) in u_nodal.iter_mut().zip(&ops.u_hf) {
        *u += f;
    }
    let problem = CoefficientProblem::new(mesh, &prep.elements, &u_nodal, &nodal_from_dofs(mesh, &w));
    let alpha_q = cfg.alpha_q.value(delta).map_err(|e| e.at_stage("coefficient"))?;
    let method = registry.get(&cfg.method).map_err(|e| e.at_stage("coefficient"))?;
    let coefficient = method
        .reconstruct(&problem, &cfg.tv.params(alpha_q))
        .map_err(|e| e.at_stage("coefficient"))?;
    for flag in &coefficient.flags {
        log::warn!("delta = {delta:e}: {flag}");
    }

    let q = prep.q_true();
    let q_err_linf = coefficient.linf_error(mesh, &q);
    Ok(DeltaRecord {
        index,
        delta,
        measurement,
        errors,
        u_nodal,
        q_err_rel: q_err_linf / cfg.potential.sup_norm(),
        q_err_l2: coefficient.l2_error(mesh, &q),
        q_argmax: coefficient.argmax(mesh),
        q_err_linf,
        state,
        coefficient,
        seconds: t.elapsed().as_secs_f64(),
    })
}

pub struct ExperimentResult {
    pub prepared: Prepared,
    pub records: Vec<DeltaRecord>,
    pub fit: Option<StabilityFit>,
    /// Why the fit is missing.
    pub fit_note: Option<String>,
}

impl ExperimentResult {
    pub fn config(&self) -> &ExperimentConfig {
        &self.prepared.config
    }

    /// The record closest to the representative noise level.
    pub fn representative(&self) -> Option<&DeltaRecord> {
        let levels: Vec<f64> = self.records.iter().map(|r| r.delta).collect();
        let target = self.config().representative(&levels);
        self.records.iter().find(|r| r.delta == target)
    }
}

/// Stability fit on the positive noise levels, `None` with a reason when
/// fewer than three are usable.
pub fn fit_records(records: &[DeltaRecord]) -> (Option<StabilityFit>, Option<String>) {
    let points: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.delta > 0.0 && r.delta < 1.0 && r.q_err_linf > 0.0)
        .map(|r| (r.delta, r.q_err_linf))
        .collect();
    match fit_stability(&points) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    }
}

pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    let prepared = prepare(config)?;
    let levels = config.noise.levels()?;
    let registry = MethodRegistry::default();
    let mut records = Vec::with_capacity(levels.len());
    for (i, &delta) in levels.iter().enumerate() {
        let rec = run_delta(&prepared, &registry, i, delta)?;
        log::info!(
            "delta = {:e}: state error {:.3e}, q error {:.3e} (relative {:.3})",
            delta,
            rec.errors.total,
            rec.q_err_linf,
            rec.q_err_rel
        );
        records.push(rec);
    }
    let (fit, fit_note) = fit_records(&records);
    if let Some(note) = &fit_note {
        log::warn!("no stability fit: {note}");
    }
    Ok(ExperimentResult {
        prepared,
        records,
        fit,
        fit_note,
    })
}

pub const SUMMARY_HEADER: [&str; 18] = [
    "delta",
    "seed",
    "alpha",
    "alpha_q",
    "alpha_tv",
    "residual_y",
    "reg_norm",
    "state_err_s",
    "bias_s",
    "noise_s",
    "state_err_l2",
    "q_err_linf",
    "q_err_rel",
    "q_err_l2",
    "q_max",
    "argmax_x",
    "argmax_y",
    "converged",
];

/// Writes the CSV artefacts into `dir` and returns their paths. Every file
/// except `timings.csv` is a deterministic function of the configuration.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mesh = result.prepared.mesh().clone();

    let path = dir.join("summary.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(SUMMARY_HEADER)?;
    for r in &result.records {
        w.write_record([
            fmt(r.delta),
            r.measurement.seed.to_string(),
            fmt(r.state.alpha),
            fmt(r.coefficient.alpha_q),
            r.coefficient.alpha_tv.map(fmt).unwrap_or_default(),
            fmt(r.state.residual_y),
            fmt(r.state.reg_norm),
            fmt(r.errors.total),
            fmt(r.errors.bias),
            fmt(r.errors.noise),
            fmt(r.errors.total_l2),
            fmt(r.q_err_linf),
            fmt(r.q_err_rel),
            fmt(r.q_err_l2),
            fmt(r.coefficient.max_value()),
            fmt(r.q_argmax[0]),
            fmt(r.q_argmax[1]),
            r.coefficient.converged.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    let path = dir.join("fit.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(["gamma", "c", "r2", "n", "note"])?;
    match (&result.fit, &result.fit_note) {
        (Some(f), _) => w.write_record([fmt(f.gamma), fmt(f.c), fmt(f.r2), f.n.to_string(), String::new()])?,
        (None, note) => w.write_record(["", "", "", "0", note.as_deref().unwrap_or("")])?,
    }
    w.flush().map_err(|e| Error::io(&path, e))?;
    written.push(path);

    if let Some(rep) = result.representative() {
        let path = dir.join("state.csv");
        let u_ref = nodal_from_dofs(&mesh, &result.prepared.u0_ref);
        let mut rows = Vec::new();
        for (i, x) in mesh.nodes.iter().enumerate() {
            if mesh.dof_of_node[i].is_none() {
                continue;
            }
            let mut row = vec![x[0]];
            if mesh.dim == 2 {
                row.push(x[1]);
            }
            row.push(rep.u_nodal[i]);
            row.push(u_ref[i] + result.prepared.ops.u_hf[i]);
            rows.push(row);
        }
        let header: &[&str] = if mesh.dim == 1 {
            &["x", "u_rec", "u_ref"]
        } else {
            &["x", "y", "u_rec", "u_ref"]
        };
        write_table(&path, header, &rows)?;
        written.push(path);

        let path = dir.join("coefficient.csv");
        let q = result.prepared.q_true();
        let mut rows = Vec::new();
        for (&e, &v) in rep.coefficient.elements.iter().zip(&rep.coefficient.values) {
            let c = mesh.simplex(e).centroid();
            let mut row = vec![c[0]];
            if mesh.dim == 2 {
                row.push(c[1]);
            }
            row.push(v);
            row.push(q(&c));
            rows.push(row);
        }
        let header: &[&str] = if mesh.dim == 1 {
            &["x", "q_rec", "q_true"]
        } else {
            &["x", "y", "q_rec", "q_true"]
        };
        write_table(&path, header, &rows)?;
        written.push(path);

        let path = dir.join("measurement.csv");
        rep.measurement.write_csv(&path)?;
        written.push(path);
    }

    for r in &result.records {
        if let MethodDetails::Tv { report, .. } = &r.coefficient.details {
            let path = dir.join(format!("admm_{}.csv", r.index));
            let rows: Vec<Vec<f64>> = report
                .history
                .iter()
                .enumerate()
                .map(|(k, &(p, d, o))| vec![k as f64, p, d, o])
                .collect();
            write_table(&path, &["iteration", "primal", "dual", "objective"], &rows)?;
            written.push(path);
        }
    }

    let path = dir.join("timings.csv");
    let t = result.prepared.timings;
    let mut rows = vec![vec![-1.0, t.assembly, t.forward, t.normal]];
    rows.extend(result.records.iter().map(|r| vec![r.delta, 0.0, 0.0, r.seconds]));
    write_table(&path, &["delta", "assembly_s", "forward_s", "solve_s"], &rows)?;
    written.push(path);
    Ok(written)
}
