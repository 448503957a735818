use std::path::Path;

use fracrecon::assembly::ExteriorDatum;
use fracrecon::coeffrec::MethodRegistry;
use fracrecon::error::Error;
use fracrecon::geometry::{build_mesh, Aabb, DomainSpec};
use fracrecon::harness::diagnostics::{consistency_diagnostics, eta_i, eta_t, eta_t_at};
use fracrecon::harness::experiment::{prepare, run_delta, ExperimentResult};
use fracrecon::harness::plots::write_figures;
use fracrecon::harness::{run_experiment, write_outputs, ExperimentConfig};
use fracrecon::kernel::FracOrder;

const SMALL: &str = r#"
name = "small"
s = 0.6
seed = 11
[domain]
dim = 1
r = 3.0
omega_half = 1.0
eps_gap = 0.1
h = 0.1
omega_prime = { lo = [-0.8, 0.0], hi = [0.8, 0.0] }
[potential]
kind = "bump1d"
a = 10.0
r = 0.8660254037844386
[noise]
deltas = [1e-5, 1e-3, 1e-1]
[alpha_q]
kind = "linear"
c = 0.01
"#;

fn small() -> ExperimentConfig {
    ExperimentConfig::from_toml(SMALL).unwrap()
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap()
}

#[test]
fn shipped_configs_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            n += 1;
        }
    }
    assert!(n >= 4);
}

#[test]
fn presets_match_the_published_potentials() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let ex41 = ExperimentConfig::load(&dir.join("ex41.toml")).unwrap();
    assert!((ex41.potential.eval(&[0.5, 0.0]) - 10.0 * (0.75 - 0.25)).abs() < 1e-12);
    assert_eq!(ex41.potential.eval(&[0.9, 0.0]), 0.0);
    assert_eq!(ex41.noise.levels().unwrap(), vec![1e-7, 1e-5, 1e-3, 1e-1]);
    let ex42 = ExperimentConfig::load(&dir.join("ex42.toml")).unwrap();
    assert_eq!(ex42.potential.eval(&[0.49, 0.0]), 1.0);
    assert_eq!(ex42.potential.eval(&[0.51, 0.0]), 0.0);
    assert!((ex42.alpha_q.value(1e-8).unwrap() - 1e-6).abs() < 1e-18);
    let ex43 = ExperimentConfig::load(&dir.join("ex43.toml")).unwrap();
    let want = 100.0 * (0.5625f64 - 0.01).powi(3) * (0.5625f64 - 0.04).powi(3);
    assert!((ex43.potential.eval(&[0.1, 0.2]) - want).abs() < 1e-12);
    let levels = ex43.noise.levels().unwrap();
    assert!((levels[0] - 1e-10).abs() < 1e-22 && (levels[levels.len() - 1] - 1e-1).abs() < 1e-13);
}

#[test]
fn experiment_outputs_are_reproducible() {
    let cfg = small();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let first = run_experiment(&cfg).unwrap();
    write_outputs(&first, a.path()).unwrap();
    let second = run_experiment(&cfg).unwrap();
    write_outputs(&second, b.path()).unwrap();
    for name in [
        "summary.csv",
        "fit.csv",
        "state.csv",
        "coefficient.csv",
        "measurement.csv",
    ] {
        assert_eq!(read(a.path(), name), read(b.path(), name), "{name}");
    }
    let figs = write_figures(&first, a.path()).unwrap();
    assert_eq!(figs.len(), 4);
    assert!(first.fit.is_some());
    for r in &first.records {
        assert!(r.q_err_linf.is_finite() && r.q_err_l2.is_finite());
        assert!(r.coefficient.values.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn seeds_change_the_noise() {
    let cfg = small().with_delta(1e-3);
    let prep = prepare(&cfg).unwrap();
    let reg = MethodRegistry::default();
    let a = run_delta(&prep, &reg, 0, 1e-3).unwrap();
    let b = run_delta(&prep, &reg, 1, 1e-3).unwrap();
    assert_ne!(a.measurement.mu_noisy, b.measurement.mu_noisy);
    assert_eq!(a.measurement.mu_clean, b.measurement.mu_clean);
}

#[test]
fn normal_equations_hold_at_the_reconstruction() {
    let prep = prepare(&small()).unwrap();
    let reg = MethodRegistry::default();
    let rec = run_delta(&prep, &reg, 0, 1e-3).unwrap();
    let k = prep.normal.system(&prep.ops, rec.state.alpha);
    let rhs = &prep.normal.btw * &rec.measurement.mu_noisy;
    let res = (&k * &rec.state.v - &rhs).norm() / rhs.norm();
    assert!(res < 1e-10, "{res}");
}

#[test]
fn single_level_result_has_no_stability_figure() {
    let cfg = small().with_delta(1e-3);
    let prep = prepare(&cfg).unwrap();
    let rec = run_delta(&prep, &MethodRegistry::default(), 0, 1e-3).unwrap();
    let result = ExperimentResult {
        prepared: prep,
        records: vec![rec],
        fit: None,
        fit_note: None,
    };
    let dir = tempfile::tempdir().unwrap();
    let figs = write_figures(&result, dir.path()).unwrap();
    assert_eq!(figs.len(), 3);
    assert!(!dir.path().join("fig_stability.svg").exists());

    let empty = ExperimentResult {
        records: vec![],
        ..result
    };
    let err = write_figures(&empty, dir.path()).unwrap_err();
    assert!(err.to_string().contains("no records"));
}

#[test]
fn tv_in_two_dimensions_fails_at_the_coefficient_stage() {
    let text = SMALL
        .replace("dim = 1", "dim = 2")
        .replace("h = 0.1", "h = 0.5")
        .replace("eps_gap = 0.1", "eps_gap = 0.5")
        .replace("r = 3.0", "r = 2.0")
        .replace(
            "lo = [-0.8, 0.0], hi = [0.8, 0.0]",
            "lo = [-0.5, -0.5], hi = [0.5, 0.5]",
        )
        .replace(
            "kind = \"bump1d\"\na = 10.0\nr = 0.8660254037844386",
            "kind = \"bump2d\"\na = 100.0\nr = 0.5",
        )
        .replace("s = 0.6", "s = 0.5\nmethod = \"tv\"");
    let cfg = ExperimentConfig::from_toml(&text).unwrap().with_delta(1e-3);
    let err = run_experiment(&cfg).err().unwrap();
    match &err {
        Error::Stage { stage, .. } => assert_eq!(*stage, "coefficient"),
        e => panic!("unexpected {e}"),
    }
    assert!(err.is_config());
}

#[test]
fn tail_consistency_term_decreases_with_radius() {
    let fo = FracOrder::new(0.6, 1).unwrap();
    let datum = ExteriorDatum::default();
    let spec = DomainSpec {
        dim: 1,
        r: 2.0,
        omega_half: 1.0,
        eps_gap: 0.1,
        omega_prime: Aabb::cube(1, 0.5),
        h: 0.1,
    };
    let mesh = build_mesh(&spec).unwrap();
    let base = eta_t(&mesh, &fo, &datum).unwrap();
    assert_eq!(base, eta_t_at(&mesh, &fo, &datum, 2.0).unwrap());
    let mut last = base;
    for r in [4.0, 8.0, 16.0] {
        let t = eta_t_at(&mesh, &fo, &datum, r).unwrap();
        assert!(t < last, "R = {r}: {t} vs {last}");
        last = t;
    }
    let rows = consistency_diagnostics(&spec, 0.6, &datum, &[2.0, 4.0], 1).unwrap();
    assert_eq!(rows.len(), 2);
    assert!(rows[1].eta_t < rows[0].eta_t);
}

#[test]
fn interpolation_consistency_term_decreases_with_h() {
    let fo = FracOrder::new(0.6, 1).unwrap();
    let datum = ExteriorDatum::default();
    let spec = |h| DomainSpec {
        dim: 1,
        r: 3.0,
        omega_half: 1.0,
        eps_gap: 0.1,
        omega_prime: Aabb::cube(1, 0.5),
        h,
    };
    let coarse = eta_i(&spec(0.05), &fo, &datum).unwrap();
    let fine = eta_i(&spec(0.025), &fo, &datum).unwrap();
    assert!(fine < coarse, "{fine} vs {coarse}");
}
