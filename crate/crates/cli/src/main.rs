use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use fracrecon::coeffrec::MethodRegistry;
use fracrecon::error::{Error, Result};
use fracrecon::forward::{add_noise, forward_on};
use fracrecon::harness::experiment::{assemble_cached, prepare, run_delta, write_outputs, ExperimentResult};
use fracrecon::harness::plots::write_figures;
use fracrecon::harness::{consistency_diagnostics, fit_stability, run_experiment, ExperimentConfig};
use fracrecon::kernel::FracOrder;
use fracrecon::output::{csv_writer, fmt, write_table};

#[derive(Parser)]
#[command(
    name = "fracrecon",
    version,
    about = "Single-measurement reconstruction for the fractional Calderón problem"
)]
struct Cli {
    /// Log progress to stderr (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Assemble the reconstruction and data-mesh operators and store them in the cache.
    Assemble(Common),
    /// Synthesise noisy measurements.
    Forward(Common),
    /// Reconstruct state and potential for one noise level.
    Reconstruct(Common),
    /// Run the full noise ladder and write tables and figures.
    Experiment(Common),
    /// Fit `e ≈ C |ln δ|^{-γ}` to a column of a summary table.
    Fit(FitArgs),
    /// Tabulate the interpolation and truncation consistency terms.
    Diagnostics(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Base seed of the noise draws.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replace the noise ladder by a single level.
    #[arg(long)]
    delta: Option<f64>,
    /// Coefficient method: quadratic or tv.
    #[arg(long)]
    method: Option<String>,
}

#[derive(Args)]
struct FitArgs {
    /// CSV table with a `delta` column.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "q_err_linf")]
    column: String,
    /// Directory for `fit.csv`; nothing is written when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        if let Some(delta) = self.delta {
            cfg = cfg.with_delta(delta);
        }
        if let Some(method) = &self.method {
            cfg.method = method.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn cmd_assemble(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let cache = cfg.cache_dir.clone().unwrap_or_else(|| cfg.out_dir.join("cache"));
    let fo = FracOrder::new(cfg.s, cfg.domain.dim)?;
    let datum = cfg.datum.datum();
    let mut specs = vec![cfg.domain.clone()];
    if cfg.forward.refinement > 1 {
        specs.push(cfg.domain.with_h(cfg.domain.h / cfg.forward.refinement as f64));
    }
    for spec in specs {
        let t = Instant::now();
        let ops = assemble_cached(&spec, fo, &datum, Some(&cache)).map_err(|e| e.at_stage("assembly"))?;
        println!(
            "h = {}: {} interior dofs, {} observation nodes, {:.1} s",
            spec.h,
            ops.n_dofs(),
            ops.n_obs(),
            t.elapsed().as_secs_f64()
        );
    }
    println!("operators cached in {}", cache.display());
    Ok(())
}

fn cmd_forward(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let fo = FracOrder::new(cfg.s, cfg.domain.dim)?;
    let datum = cfg.datum.datum();
    let cache = cfg.cache_dir.as_deref();
    let ops = assemble_cached(&cfg.domain, fo, &datum, cache).map_err(|e| e.at_stage("assembly"))?;
    let fine = if cfg.forward.refinement == 1 {
        Arc::new(ops.clone())
    } else {
        let spec = cfg.domain.with_h(cfg.domain.h / cfg.forward.refinement as f64);
        Arc::new(assemble_cached(&spec, fo, &datum, cache).map_err(|e| e.at_stage("forward"))?)
    };
    let q = |x: &[f64; 2]| cfg.potential.eval(x);
    let sol = forward_on(&ops, fine, &q).map_err(|e| e.at_stage("forward"))?;
    for (i, &delta) in cfg.noise.levels()?.iter().enumerate() {
        let m = add_noise(&ops, &sol.mu_clean, delta, cfg.seed_for(i)).map_err(|e| e.at_stage("noise"))?;
        let path = cfg.out_dir.join(format!("measurement_{i}.csv"));
        m.write_csv(&path)?;
        println!("delta = {delta:e}: {}", path.display());
    }
    Ok(())
}

fn print_records(result: &ExperimentResult) {
    println!(
        "{:>10} {:>11} {:>11} {:>11} {:>9}",
        "delta", "state_err", "q_err_linf", "q_err_rel", "q_max"
    );
    for r in &result.records {
        println!(
            "{:>10.1e} {:>11.3e} {:>11.3e} {:>11.3e} {:>9.4}",
            r.delta,
            r.errors.total,
            r.q_err_linf,
            r.q_err_rel,
            r.coefficient.max_value()
        );
    }
}

fn cmd_reconstruct(c: &Common) -> Result<()> {
    let mut cfg = c.load()?;
    if c.delta.is_none() {
        let levels = cfg.noise.levels()?;
        let delta = cfg.representative(&levels);
        cfg = cfg.with_delta(delta);
    }
    let prepared = prepare(&cfg)?;
    let record = run_delta(&prepared, &MethodRegistry::default(), 0, cfg.noise.levels()?[0])?;
    let result = ExperimentResult {
        prepared,
        records: vec![record],
        fit: None,
        fit_note: Some("single noise level".into()),
    };
    write_outputs(&result, &cfg.out_dir)?;
    write_figures(&result, &cfg.out_dir)?;
    print_records(&result);
    Ok(())
}

fn cmd_experiment(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let result = run_experiment(&cfg)?;
    let mut files = write_outputs(&result, &cfg.out_dir)?;
    files.extend(write_figures(&result, &cfg.out_dir)?);
    print_records(&result);
    match &result.fit {
        Some(f) => println!("fit: gamma = {:.4}, C = {:.4}, R^2 = {:.4}", f.gamma, f.c, f.r2),
        None => println!("fit: {}", result.fit_note.as_deref().unwrap_or("unavailable")),
    }
    println!("wrote {} files to {}", files.len(), cfg.out_dir.display());
    Ok(())
}

fn read_column(path: &Path, column: &str) -> Result<Vec<(f64, f64)>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    let headers = rd.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Config(format!("{}: no column '{name}'", path.display())))
    };
    let (id, ie) = (find("delta")?, find(column)?);
    let mut out = Vec::new();
    for rec in rd.records() {
        let rec = rec?;
        let parse = |i: usize| {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("{}: '{}' is not a number", path.display(), &rec[i])))
        };
        out.push((parse(id)?, parse(ie)?));
    }
    Ok(out)
}

fn cmd_fit(a: &FitArgs) -> Result<()> {
    let points = read_column(&a.input, &a.column)?;
    let f = fit_stability(&points)?;
    println!("gamma = {:.6}\nC = {:.6}\nR^2 = {:.6}\nn = {}", f.gamma, f.c, f.r2, f.n);
    if let Some(dir) = &a.out {
        let path = dir.join("fit.csv");
        let mut w = csv_writer(&path)?;
        w.write_record(["gamma", "c", "r2", "n"])?;
        w.write_record([fmt(f.gamma), fmt(f.c), fmt(f.r2), f.n.to_string()])?;
        w.flush().map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

fn cmd_diagnostics(c: &Common) -> Result<()> {
    let cfg = c.load()?;
    let rows = consistency_diagnostics(
        &cfg.domain,
        cfg.s,
        &cfg.datum.datum(),
        &cfg.diagnostics.r_list,
        cfg.diagnostics.h_levels,
    )
    .map_err(|e| e.at_stage("diagnostics"))?;
    println!("{:>10} {:>6} {:>7} {:>12} {:>12}", "h", "R", "n_obs", "eta_I", "eta_t");
    let mut table = Vec::new();
    for r in &rows {
        let eta_i = r.eta_i.unwrap_or(f64::NAN);
        println!(
            "{:>10} {:>6} {:>7} {:>12.4e} {:>12.4e}",
            r.h, r.r, r.n_obs, eta_i, r.eta_t
        );
        table.push(vec![r.h, r.r, r.n_obs as f64, eta_i, r.eta_t]);
    }
    write_table(
        &cfg.out_dir.join("consistency.csv"),
        &["h", "r", "n_obs", "eta_i", "eta_t"],
        &table,
    )
}

fn exit_code(e: &Error) -> u8 {
    if e.is_config() {
        2
    } else if matches!(e.root(), Error::Numerical(_) | Error::Resonance(_)) {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match &cli.command {
        Command::Assemble(c) => cmd_assemble(c),
        Command::Forward(c) => cmd_forward(c),
        Command::Reconstruct(c) => cmd_reconstruct(c),
        Command::Experiment(c) => cmd_experiment(c),
        Command::Fit(a) => cmd_fit(a),
        Command::Diagnostics(c) => cmd_diagnostics(c),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
