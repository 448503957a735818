//! Total-variation recovery of piecewise constant potentials in 1D.
//!
//! Minimises `Σ g_k q_k² - 2 b_k q_k + α_tv Σ |q_{k+1} - q_k|` by ADMM with
//! the splitting `z = D q` and a scaled dual variable.

use super::CoefficientProblem;

pub fn soft_threshold(x: f64, kappa: f64) -> f64 {
    x.signum() * (x.abs() - kappa).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdmmOptions {
    /// Absolute tolerance on primal and dual residual norms.
    pub tol: f64,
    pub max_iter: usize,
    /// Penalty parameter; `None` uses `α_tv`, or the mean diagonal when `α_tv = 0`.
    pub rho: Option<f64>,
    /// Residual-balancing period; 0 disables balancing.
    pub balance_every: usize,
}

impl Default for AdmmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 3000,
            rho: None,
            balance_every: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdmmReport {
    pub iterations: usize,
    pub converged: bool,
    /// `(primal residual, dual residual, objective)` per iteration.
    pub history: Vec<(f64, f64, f64)>,
    pub rho: f64,
}

/// `Σ g q² - 2 b q + α_tv ‖D q‖₁`.
pub fn tv_objective(g: &[f64], b: &[f64], alpha_tv: f64, q: &[f64]) -> f64 {
    let quad: f64 = (0..q.len()).map(|k| g[k] * q[k] * q[k] - 2.0 * b[k] * q[k]).sum();
    quad + alpha_tv * q.windows(2).map(|w| (w[1] - w[0]).abs()).sum::<f64>()
}

fn jumps(q: &[f64]) -> Vec<f64> {
    q.windows(2).map(|w| w[1] - w[0]).collect()
}

/// `D^T x` for the forward difference `D`.
fn dt(x: &[f64], n: usize) -> Vec<f64> {
    let mut out = vec![0.0; n];
    for (i, &v) in x.iter().enumerate() {
        out[i] -= v;
        out[i + 1] += v;
    }
    out
}

/// Solves the symmetric tridiagonal system `(diag(d) + ρ D^T D) x = r`.
fn solve_tridiagonal(d: &[f64], rho: f64, r: &[f64]) -> Vec<f64> {
    let n = d.len();
    let mut main: Vec<f64> = (0..n)
        .map(|i| {
            let deg = (i > 0) as u8 as f64 + (i + 1 < n) as u8 as f64;
            d[i] + rho * deg
        })
        .collect();
    let off = -rho;
    let mut rhs = r.to_vec();
    for i in 1..n {
        let m = off / main[i - 1];
        main[i] -= m * off;
        rhs[i] -= m * rhs[i - 1];
    }
    let mut x = vec![0.0; n];
    if n == 0 {
        return x;
    }
    x[n - 1] = rhs[n - 1] / main[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = (rhs[i] - off * x[i + 1]) / main[i];
    }
    x
}

/// ADMM for the TV-regularised quadratic. Returns the iterate with the
/// lowest objective seen.
pub fn admm_tv(g: &[f64], b: &[f64], alpha_tv: f64, opts: &AdmmOptions) -> (Vec<f64>, AdmmReport) {
    let n = g.len();
    let mut rho = opts.rho.unwrap_or(if alpha_tv > 0.0 {
        alpha_tv
    } else {
        2.0 * g.iter().sum::<f64>() / n.max(1) as f64
    });
    if !(rho > 0.0) {
        rho = 1.0;
    }
    let d2: Vec<f64> = g.iter().map(|x| 2.0 * x).collect();
    let mut q: Vec<f64> = (0..n).map(|k| b[k] / g[k]).collect();
    let mut z = jumps(&q);
    let mut y = vec![0.0; z.len()];
    let mut report = AdmmReport::default();
    let mut best = (tv_objective(g, b, alpha_tv, &q), q.clone());
    for it in 1..=opts.max_iter {
        let zy: Vec<f64> = z.iter().zip(&y).map(|(a, c)| a - c).collect();
        let dtzy = dt(&zy, n);
        let r: Vec<f64> = (0..n).map(|k| 2.0 * b[k] + rho * dtzy[k]).collect();
        q = solve_tridiagonal(&d2, rho, &r);
        let dq = jumps(&q);
        let z_old = std::mem::take(&mut z);
        z = dq
            .iter()
            .zip(&y)
            .map(|(a, c)| soft_threshold(a + c, alpha_tv / rho))
            .collect();
        for k in 0..y.len() {
            y[k] += dq[k] - z[k];
        }
        let primal = dq.iter().zip(&z).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
        let dz: Vec<f64> = z.iter().zip(&z_old).map(|(a, c)| a - c).collect();
        let dual = rho * dt(&dz, n).iter().map(|v| v * v).sum::<f64>().sqrt();
        let obj = tv_objective(g, b, alpha_tv, &q);
        report.history.push((primal, dual, obj));
        report.iterations = it;
        if obj < best.0 {
            best = (obj, q.clone());
        }
        if primal < opts.tol && dual < opts.tol {
            report.converged = true;
            best = (obj, q.clone());
            break;
        }
        if opts.balance_every > 0 && it % opts.balance_every == 0 {
            if primal > 10.0 * dual {
                rho *= 2.0;
                y.iter_mut().for_each(|v| *v /= 2.0);
            } else if dual > 10.0 * primal {
                rho /= 2.0;
                y.iter_mut().for_each(|v| *v *= 2.0);
            }
        }
    }
    report.rho = rho;
    (best.1, report)
}

/// Number of jumps above a quarter of the largest jump. Jumps not exceeding
/// `floor` count as zero.
pub fn count_jumps(q: &[f64], floor: f64) -> usize {
    let d = jumps(q);
    let max = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
    if max <= floor {
        return 0;
    }
    d.iter().filter(|v| v.abs() > (0.25 * max).max(floor)).count()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptiveSelection {
    pub sigma_q: f64,
    pub candidates: Vec<f64>,
    pub jump_counts: Vec<usize>,
    pub selected: usize,
    pub alpha_tv: f64,
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Scans `α_tv = σ_q 10^τ`, `τ ∈ {-2, -5/3, ..., 1}`, with `σ_q` the median
/// absolute jump of the baseline, and keeps the candidate whose jump count is
/// closest to two (ties go to the larger weight).
pub fn adaptive_alpha_tv(
    baseline: &[f64],
    problem: &CoefficientProblem,
    alpha_q: f64,
    opts: &AdmmOptions,
) -> AdaptiveSelection {
    let abs_jumps: Vec<f64> = jumps(baseline).iter().map(|v| v.abs()).collect();
    let sigma_q = median(&abs_jumps) + 1e-14;
    let g = problem.gram_diagonal(alpha_q);
    let b = problem.rhs();
    let candidates: Vec<f64> = (0..10).map(|j| sigma_q * 10f64.powf(-2.0 + j as f64 / 3.0)).collect();
    let jump_counts: Vec<usize> = candidates
        .iter()
        .map(|&a| count_jumps(&admm_tv(&g, &b, a, opts).0, opts.tol))
        .collect();
    let mut selected = 0;
    for j in 0..candidates.len() {
        let dj = jump_counts[j].abs_diff(2);
        let ds = jump_counts[selected].abs_diff(2);
        if dj <= ds {
            selected = j;
        }
    }
    log::info!(
        "adaptive alpha_tv: sigma_q = {sigma_q:e}, jump counts {:?}, selected alpha_tv = {:e}",
        jump_counts,
        candidates[selected]
    );
    AdaptiveSelection {
        sigma_q,
        alpha_tv: candidates[selected],
        candidates,
        jump_counts,
        selected,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Debiased {
    pub values: Vec<f64>,
    /// Fitted level after clamping; `None` for an empty support.
    pub level: Option<f64>,
    pub clamped: bool,
}

/// Thresholds at 1/2, refits one level `c* = -∫ w u / ∫ u²` on the support and
/// clamps it to `[0, 1]`.
pub fn debias(q_tv: &[f64], problem: &CoefficientProblem) -> Debiased {
    let support: Vec<usize> = (0..q_tv.len()).filter(|&k| q_tv[k] > 0.5).collect();
    let uu: f64 = support.iter().map(|&k| problem.uu[k]).sum();
    if support.is_empty() || uu == 0.0 {
        return Debiased {
            values: vec![0.0; q_tv.len()],
            level: None,
            clamped: false,
        };
    }
    let wu: f64 = support.iter().map(|&k| problem.wu[k]).sum();
    let raw = -wu / uu;
    let level = raw.clamp(0.0, 1.0);
    let mut values = vec![0.0; q_tv.len()];
    for &k in &support {
        values[k] = level;
    }
    Debiased {
        values,
        level: Some(level),
        clamped: level != raw,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn indicator_problem(n: usize) -> CoefficientProblem {
        // u ≡ 1 on (-1, 1), w = -1 on (-1/2, 1/2).
        let m = 2.0 / n as f64;
        let centers: Vec<f64> = (0..n).map(|k| -1.0 + (k as f64 + 0.5) * m).collect();
        let w: Vec<f64> = centers.iter().map(|c| if c.abs() < 0.5 { -1.0 } else { 0.0 }).collect();
        CoefficientProblem {
            dim: 1,
            elements: (0..n).collect(),
            measures: vec![m; n],
            uu: vec![m; n],
            wu: w.iter().map(|x| x * m).collect(),
            ww: w.iter().map(|x| x * x * m).collect(),
        }
    }

    #[test]
    fn shrinkage() {
        assert_eq!(soft_threshold(0.3, 0.5), 0.0);
        assert!((soft_threshold(-2.0, 0.5) + 1.5).abs() < 1e-15);
    }

    #[test]
    fn tridiagonal_solver_matches_dense() {
        let d = [1.0, 2.0, 0.5, 3.0];
        let rho = 0.7;
        let r = [1.0, -1.0, 2.0, 0.5];
        let x = solve_tridiagonal(&d, rho, &r);
        let mut a = nalgebra::DMatrix::<f64>::zeros(4, 4);
        for i in 0..4 {
            a[(i, i)] = d[i];
        }
        for i in 0..3 {
            a[(i, i)] += rho;
            a[(i + 1, i + 1)] += rho;
            a[(i, i + 1)] -= rho;
            a[(i + 1, i)] -= rho;
        }
        let want = a.lu().solve(&nalgebra::DVector::from_row_slice(&r)).unwrap();
        for i in 0..4 {
            assert!((x[i] - want[i]).abs() < 1e-13);
        }
    }

    #[test]
    fn zero_weight_reproduces_quadratic() {
        let p = indicator_problem(20);
        let g = p.gram_diagonal(1e-3);
        let b = p.rhs();
        let (q, rep) = admm_tv(&g, &b, 0.0, &AdmmOptions::default());
        assert!(rep.converged);
        for k in 0..20 {
            assert!((q[k] - b[k] / g[k]).abs() < 1e-6);
        }
    }

    #[test]
    fn indicator_has_two_jumps() {
        let p = indicator_problem(40);
        let g = p.gram_diagonal(1e-4);
        let (q, rep) = admm_tv(&g, &p.rhs(), 1e-3, &AdmmOptions::default());
        assert!(rep.converged);
        assert_eq!(count_jumps(&q, 1e-6), 2);
        let d = debias(&q, &p);
        assert!((d.level.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn debias_rules() {
        let p = indicator_problem(8);
        let q: Vec<f64> = (0..8).map(|k| if (2..6).contains(&k) { 0.9 } else { 0.0 }).collect();
        let d = debias(&q, &p);
        assert_eq!(d.level, Some(1.0));
        assert!(!d.clamped);
        let empty = debias(&[0.4; 8], &p);
        assert_eq!(empty.level, None);
        assert!(empty.values.iter().all(|&v| v == 0.0));
        let mut scaled = p.clone();
        scaled.wu.iter_mut().for_each(|v| *v *= 1.3);
        let c = debias(&q, &scaled);
        assert_eq!(c.level, Some(1.0));
        assert!(c.clamped);
    }

    #[test]
    fn candidate_grid() {
        let p = indicator_problem(40);
        let baseline: Vec<f64> = (0..40).map(|k| if (10..30).contains(&k) { 1.0 } else { 0.0 }).collect();
        let sel = adaptive_alpha_tv(&baseline, &p, 1e-4, &AdmmOptions::default());
        assert_eq!(sel.sigma_q, 1e-14);
        assert_eq!(sel.candidates.len(), 10);
        assert!((sel.candidates[9] / sel.candidates[0] - 1000.0).abs() < 1e-9);
    }
}
