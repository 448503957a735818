//! Minimal SVG figures: line plots with optional log axes and triangle heatmaps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::experiment::ExperimentResult;
use crate::coeffrec::MethodDetails;
use crate::error::{Error, Result};
use crate::forward::nodal_from_dofs;

const W: f64 = 640.0;
const H: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#555555"];

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
    pub markers: bool,
}

impl Series {
    pub fn line(name: &str, points: Vec<(f64, f64)>) -> Self {
        Self {
            name: name.into(),
            points,
            dashed: false,
            markers: false,
        }
    }

    pub fn dashed(mut self) -> Self {
        self.dashed = true;
        self
    }

    pub fn with_markers(mut self) -> Self {
        self.markers = true;
        self
    }
}

#[derive(Debug, Clone)]
pub struct LinePlot {
    pub title: String,
    pub xlabel: String,
    pub ylabel: String,
    pub logx: bool,
    pub logy: bool,
    pub series: Vec<Series>,
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn new(values: impl Iterator<Item = f64>, log: bool) -> Self {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            if v.is_finite() && (!log || v > 0.0) {
                let t = if log { v.log10() } else { v };
                lo = lo.min(t);
                hi = hi.max(t);
            }
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if log {
            lo = lo.floor();
            hi = hi.ceil();
        }
        if hi - lo < 1e-12 {
            lo -= 0.5;
            hi += 0.5;
        } else if !log {
            let pad = 0.05 * (hi - lo);
            lo -= pad;
            hi += pad;
        }
        Self { lo, hi, log }
    }

    fn frac(&self, v: f64) -> Option<f64> {
        if self.log && v <= 0.0 || !v.is_finite() {
            return None;
        }
        let t = if self.log { v.log10() } else { v };
        Some((t - self.lo) / (self.hi - self.lo))
    }

    /// Tick positions in axis units and their labels.
    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let step = ((self.hi - self.lo) / 8.0).ceil().max(1.0);
            let mut out = Vec::new();
            let mut e = self.lo;
            while e <= self.hi + 1e-9 {
                out.push((10f64.powf(e), format!("1e{}", e as i64)));
                e += step;
            }
            return out;
        }
        let raw = (self.hi - self.lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|&s| s >= raw)
            .unwrap_or(10.0 * mag);
        let mut out = Vec::new();
        let mut t = (self.lo / step).ceil() * step;
        while t <= self.hi + 1e-9 * step {
            let v = if t.abs() < 1e-12 * step { 0.0 } else { t };
            out.push((v, format!("{}", (v / step).round() * step).chars().take(8).collect()));
            t += step;
        }
        out
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

impl LinePlot {
    pub fn new(title: &str, xlabel: &str, ylabel: &str) -> Self {
        Self {
            title: title.into(),
            xlabel: xlabel.into(),
            ylabel: ylabel.into(),
            logx: false,
            logy: false,
            series: Vec::new(),
        }
    }

    pub fn log_log(mut self) -> Self {
        self.logx = true;
        self.logy = true;
        self
    }

    pub fn push(&mut self, s: Series) {
        self.series.push(s);
    }

    pub fn to_svg(&self) -> String {
        let xa = Axis::new(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.0)), self.logx);
        let ya = Axis::new(self.series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), self.logy);
        let pw = W - LEFT - RIGHT;
        let ph = H - TOP - BOTTOM;
        let px = |v: f64| xa.frac(v).map(|f| LEFT + f * pw);
        let py = |v: f64| ya.frac(v).map(|f| TOP + (1.0 - f) * ph);

        let mut out = String::new();
        header(&mut out, &self.title);
        let _ = writeln!(
            out,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
        );
        for (v, label) in xa.ticks() {
            if let Some(x) = px(v) {
                let _ = writeln!(
                    out,
                    r##"<line x1="{x:.2}" y1="{TOP}" x2="{x:.2}" y2="{}" stroke="#e0e0e0"/><text x="{x:.2}" y="{}" text-anchor="middle">{label}</text>"##,
                    TOP + ph,
                    TOP + ph + 16.0
                );
            }
        }
        for (v, label) in ya.ticks() {
            if let Some(y) = py(v) {
                let _ = writeln!(
                    out,
                    r##"<line x1="{LEFT}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#e0e0e0"/><text x="{}" y="{:.2}" text-anchor="end">{label}</text>"##,
                    LEFT + pw,
                    LEFT - 6.0,
                    y + 4.0
                );
            }
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            H - 18.0,
            escape(&self.xlabel)
        );
        let _ = writeln!(
            out,
            r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
            TOP + ph / 2.0,
            TOP + ph / 2.0,
            escape(&self.ylabel)
        );
        for (k, s) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            let pts: Vec<(f64, f64)> = s.points.iter().filter_map(|&(x, y)| Some((px(x)?, py(y)?))).collect();
            let path: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let dash = if s.dashed { r#" stroke-dasharray="6 4""# } else { "" };
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.6"{dash}/>"#,
                path.join(" ")
            );
            if s.markers {
                for (x, y) in &pts {
                    let _ = writeln!(out, r#"<circle cx="{x:.2}" cy="{y:.2}" r="3" fill="{color}"/>"#);
                }
            }
            let ly = TOP + 12.0 + 18.0 * k as f64;
            let lx = LEFT + pw + 10.0;
            let _ = writeln!(
                out,
                r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"{dash}/><text x="{}" y="{}">{}</text>"#,
                lx + 20.0,
                lx + 25.0,
                ly + 4.0,
                escape(&s.name)
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

/// Piecewise-constant colouring of 2D polygons.
#[derive(Debug, Clone)]
pub struct Heatmap {
    pub title: String,
    pub cells: Vec<(Vec<[f64; 2]>, f64)>,
}

/// Blue-white-red ramp on `t ∈ [0, 1]`.
fn ramp(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let (r, g, b) = if t < 0.5 {
        let u = t / 0.5;
        (u, u, 1.0)
    } else {
        let u = (t - 0.5) / 0.5;
        (1.0, 1.0 - u, 1.0 - u)
    };
    format!(
        "#{:02x}{:02x}{:02x}",
        (r * 255.0) as u8,
        (g * 255.0) as u8,
        (b * 255.0) as u8
    )
}

impl Heatmap {
    pub fn to_svg(&self) -> String {
        let (mut xlo, mut xhi, mut ylo, mut yhi) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        let (mut vlo, mut vhi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (poly, v) in &self.cells {
            for p in poly {
                xlo = xlo.min(p[0]);
                xhi = xhi.max(p[0]);
                ylo = ylo.min(p[1]);
                yhi = yhi.max(p[1]);
            }
            if v.is_finite() {
                vlo = vlo.min(*v);
                vhi = vhi.max(*v);
            }
        }
        if !(vhi > vlo) {
            vhi = vlo + 1.0;
        }
        let side = (W - LEFT - RIGHT).min(H - TOP - BOTTOM);
        let scale = side / (xhi - xlo).max(yhi - ylo).max(1e-12);
        let mut out = String::new();
        header(&mut out, &self.title);
        for (poly, v) in &self.cells {
            let pts: Vec<String> = poly
                .iter()
                .map(|p| {
                    format!(
                        "{:.2},{:.2}",
                        LEFT + (p[0] - xlo) * scale,
                        TOP + side - (p[1] - ylo) * scale
                    )
                })
                .collect();
            let c = ramp((v - vlo) / (vhi - vlo));
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="{c}" stroke="{c}" stroke-width="0.3"/>"#,
                pts.join(" ")
            );
        }
        let bx = LEFT + side + 30.0;
        for k in 0..50 {
            let t = k as f64 / 49.0;
            let _ = writeln!(
                out,
                r#"<rect x="{bx}" y="{:.2}" width="18" height="{:.2}" fill="{}"/>"#,
                TOP + (1.0 - t) * side - side / 50.0,
                side / 49.0,
                ramp(t)
            );
        }
        let _ = writeln!(out, r#"<text x="{}" y="{}">{:.3e}</text>"#, bx + 24.0, TOP + 8.0, vhi);
        let _ = writeln!(out, r#"<text x="{}" y="{}">{:.3e}</text>"#, bx + 24.0, TOP + side, vlo);
        out.push_str("</svg>\n");
        out
    }
}

fn write_svg(path: &Path, svg: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// `fig_state`, `fig_decomposition` and `fig_q` for the representative noise
/// level, plus `fig_stability` when a fit exists.
pub fn write_figures(result: &ExperimentResult, dir: &Path) -> Result<Vec<PathBuf>> {
    let rep = result
        .representative()
        .ok_or_else(|| Error::Parameter("no records to plot".into()))?;
    let prep = &result.prepared;
    let mesh = prep.mesh();
    let mut written = Vec::new();
    let tag = format!("delta = {:.0e}", rep.delta);

    let mut u_ref = nodal_from_dofs(mesh, &prep.u0_ref);
    for (u, f) in u_ref.iter_mut().zip(&prep.ops.u_hf) {
        *u += f;
    }
    let path = dir.join("fig_state.svg");
    if mesh.dim == 1 {
        let mut order: Vec<usize> = (0..mesh.nodes.len())
            .filter(|&i| mesh.nodes[i][0].abs() <= mesh.omega_half)
            .collect();
        order.sort_by(|&a, &b| mesh.nodes[a][0].total_cmp(&mesh.nodes[b][0]));
        let mut plot = LinePlot::new(&format!("State, {tag}"), "x", "u");
        plot.push(Series::line(
            "reference",
            order.iter().map(|&i| (mesh.nodes[i][0], u_ref[i])).collect(),
        ));
        plot.push(
            Series::line(
                "reconstruction",
                order.iter().map(|&i| (mesh.nodes[i][0], rep.u_nodal[i])).collect(),
            )
            .dashed(),
        );
        write_svg(&path, &plot.to_svg())?;
    } else {
        let cells = (0..mesh.elements.len())
            .filter(|&e| {
                mesh.elements[e].vertices().iter().all(|&v| {
                    mesh.nodes[v][0].abs() <= mesh.omega_half + 1e-12
                        && mesh.nodes[v][1].abs() <= mesh.omega_half + 1e-12
                })
            })
            .map(|e| {
                let vs = mesh.elements[e].vertices();
                let poly = vs.iter().map(|&v| mesh.nodes[v]).collect();
                let val = vs.iter().map(|&v| rep.u_nodal[v]).sum::<f64>() / vs.len() as f64;
                (poly, val)
            })
            .collect();
        write_svg(
            &path,
            &Heatmap {
                title: format!("Reconstructed state, {tag}"),
                cells,
            }
            .to_svg(),
        )?;
    }
    written.push(path);

    let path = dir.join("fig_decomposition.svg");
    let mut plot = LinePlot::new("State error decomposition", "delta", "S-norm error").log_log();
    let pick = |f: fn(&super::experiment::DeltaRecord) -> f64| {
        result
            .records
            .iter()
            .filter(|r| r.delta > 0.0)
            .map(|r| (r.delta, f(r)))
            .collect::<Vec<_>>()
    };
    plot.push(Series::line("total", pick(|r| r.errors.total)).with_markers());
    plot.push(Series::line("bias", pick(|r| r.errors.bias)).dashed());
    plot.push(Series::line("noise", pick(|r| r.errors.noise)).dashed());
    write_svg(&path, &plot.to_svg())?;
    written.push(path);

    let path = dir.join("fig_q.svg");
    let q = prep.q_true();
    if mesh.dim == 1 {
        let mut idx: Vec<usize> = (0..rep.coefficient.elements.len()).collect();
        idx.sort_by(|&a, &b| {
            mesh.simplex(rep.coefficient.elements[a]).centroid()[0]
                .total_cmp(&mesh.simplex(rep.coefficient.elements[b]).centroid()[0])
        });
        let steps = |vals: &[f64]| {
            let mut pts = Vec::new();
            for &k in &idx {
                let el = &mesh.elements[rep.coefficient.elements[k]];
                let (a, b) = (mesh.nodes[el.verts[0]][0], mesh.nodes[el.verts[1]][0]);
                pts.push((a.min(b), vals[k]));
                pts.push((a.max(b), vals[k]));
            }
            pts
        };
        let mut plot = LinePlot::new(&format!("Potential, {tag}"), "x", "q");
        let (lo, hi) = (
            prep.config.domain.omega_prime.lo[0],
            prep.config.domain.omega_prime.hi[0],
        );
        plot.push(Series::line(
            "true",
            (0..=400)
                .map(|i| lo + (hi - lo) * i as f64 / 400.0)
                .map(|x| (x, q(&[x, 0.0])))
                .collect(),
        ));
        plot.push(Series::line(&rep.coefficient.method, steps(&rep.coefficient.values)));
        if let MethodDetails::Tv { baseline, .. } = &rep.coefficient.details {
            plot.push(Series::line("quadratic baseline", steps(baseline)).dashed());
        }
        write_svg(&path, &plot.to_svg())?;
    } else {
        let cells = rep
            .coefficient
            .elements
            .iter()
            .zip(&rep.coefficient.values)
            .map(|(&e, &v)| (mesh.elements[e].vertices().iter().map(|&n| mesh.nodes[n]).collect(), v))
            .collect();
        write_svg(
            &path,
            &Heatmap {
                title: format!("Reconstructed potential, {tag}"),
                cells,
            }
            .to_svg(),
        )?;
    }
    written.push(path);

    if let (Some(fit), true) = (&result.fit, result.records.len() >= 2) {
        let path = dir.join("fig_stability.svg");
        let mut plot = LinePlot::new("Coefficient error versus noise", "delta", "sup-norm error").log_log();
        let pts: Vec<(f64, f64)> = result
            .records
            .iter()
            .filter(|r| r.delta > 0.0)
            .map(|r| (r.delta, r.q_err_linf))
            .collect();
        plot.push(Series::line("observed", pts.clone()).with_markers());
        plot.push(
            Series::line(
                &format!("C |ln d|^-g, g = {:.2}", fit.gamma),
                pts.iter().map(|&(d, _)| (d, fit.predict(d))).collect(),
            )
            .dashed(),
        );
        write_svg(&path, &plot.to_svg())?;
        written.push(path);
    }
    Ok(written)
}
