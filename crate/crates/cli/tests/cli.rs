use std::path::Path;
use std::process::{Command, Output};

const CONFIG: &str = r#"
name = "cli"
s = 0.6
seed = 5
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
[diagnostics]
r_list = [3.0, 6.0]
h_levels = 1
"#;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fracrecon"))
        .args(args)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, text: &str) -> String {
    let path = dir.join("cfg.toml");
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

#[test]
fn experiment_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = run(&["experiment", "--config", &cfg, "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in [
        "summary.csv",
        "fit.csv",
        "state.csv",
        "coefficient.csv",
        "measurement.csv",
    ] {
        assert_eq!(
            std::fs::read(a.join(name)).unwrap(),
            std::fs::read(b.join(name)).unwrap(),
            "{name}"
        );
    }
    for fig in [
        "fig_state.svg",
        "fig_decomposition.svg",
        "fig_q.svg",
        "fig_stability.svg",
    ] {
        assert!(a.join(fig).exists(), "{fig}");
    }

    let fit = run(&["fit", "--input", a.join("summary.csv").to_str().unwrap()]);
    assert!(fit.status.success());
    assert!(String::from_utf8_lossy(&fit.stdout).contains("gamma"));
}

#[test]
fn seed_override_changes_the_measurement() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let read = |seed: &str| {
        let out = dir.path().join(format!("s{seed}"));
        let o = run(&[
            "forward",
            "--config",
            &cfg,
            "--seed",
            seed,
            "--delta",
            "1e-3",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert!(o.status.success());
        std::fs::read(out.join("measurement_0.csv")).unwrap()
    };
    assert_ne!(read("1"), read("2"));
}

#[test]
fn reconstruct_with_tv_writes_admm_history() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("r");
    let o = run(&[
        "reconstruct",
        "--config",
        &cfg,
        "--method",
        "tv",
        "--delta",
        "1e-3",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let admm = std::fs::read_to_string(out.join("admm_0.csv")).unwrap();
    assert!(admm.starts_with("iteration,primal,dual,objective"));
    assert!(!out.join("fig_stability.svg").exists());
}

#[test]
fn diagnostics_table_has_one_row_per_radius() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("d");
    let o = run(&["diagnostics", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(out.join("consistency.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);
}

#[test]
fn configuration_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = run(&["experiment", "--config", dir.path().join("none.toml").to_str().unwrap()]);
    assert_eq!(missing.status.code(), Some(2));

    let cfg = write_config(dir.path(), &CONFIG.replace("eps_gap = 0.1", "eps_gap = 0.07"));
    assert_eq!(run(&["assemble", "--config", &cfg]).status.code(), Some(2));

    let cfg = write_config(dir.path(), CONFIG);
    let bad_method = run(&["experiment", "--config", &cfg, "--method", "lasso"]);
    assert_eq!(bad_method.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad_method.stderr).contains("lasso"));

    let bad_delta = run(&["reconstruct", "--config", &cfg, "--delta", "-1"]);
    assert_eq!(bad_delta.status.code(), Some(2));
}

#[test]
fn resonant_potential_exits_with_three() {
    use fracrecon::assembly::{assemble_weighted_mass, AssembledOperators, AssemblyOptions, Potential};
    use fracrecon::harness::PotentialPreset;

    // Scale a plateau potential onto the lowest generalised eigenvalue of (A0, M_q).
    let base = fracrecon::harness::ExperimentConfig::from_toml(CONFIG).unwrap();
    let mesh = std::sync::Arc::new(fracrecon::geometry::build_mesh(&base.domain).unwrap());
    let fo = fracrecon::kernel::FracOrder::new(base.s, 1).unwrap();
    let ops = AssembledOperators::assemble(mesh.clone(), fo, &base.datum.datum(), &AssemblyOptions::default()).unwrap();
    let plateau = PotentialPreset::Table {
        x: vec![-0.9, 0.9],
        y: None,
        values: vec![1.0, 1.0],
    };
    let q = |p: &[f64; 2]| plateau.eval(p);
    let mq = assemble_weighted_mass(&mesh, Potential::Function(&q));
    let l = mq.cholesky().unwrap().l();
    let linv = l.try_inverse().unwrap();
    let lam = (&linv * &ops.a0 * linv.transpose()).symmetric_eigen().eigenvalues.min();

    let dir = tempfile::tempdir().unwrap();
    let text = CONFIG
        .replace(
            "kind = \"bump1d\"\na = 10.0\nr = 0.8660254037844386",
            &format!("kind = \"table\"\nx = [-0.9, 0.9]\nvalues = [{:e}, {:e}]", -lam, -lam),
        )
        .replace(
            "[diagnostics]",
            "[forward]\nrefinement = 1\ninverse_crime = \"allow\"\n[diagnostics]",
        );
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("o");
    let o = run(&["forward", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("resonance"));
}
